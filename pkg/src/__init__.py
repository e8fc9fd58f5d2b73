# Synthetic difference-in-differences toolkit
