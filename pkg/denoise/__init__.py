"""
LTDL denoising: block grouping, shared dictionaries and the ADMM solver.
"""
