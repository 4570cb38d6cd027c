from .fusion import *
