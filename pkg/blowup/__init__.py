# Makes blowup a Python package
