from .config import *
from .records import *
from .trainer import *
from .checkpoint import *
from .evaluation import *
from .ablation import *
