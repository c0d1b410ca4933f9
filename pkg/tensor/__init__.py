"""
Dense multilinear algebra for 3-order tensors.
"""
