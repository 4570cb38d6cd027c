from .distill import *
