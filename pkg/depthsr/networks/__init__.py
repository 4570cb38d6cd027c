from .blocks import *
from .models import *
