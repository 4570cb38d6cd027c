from .rasters import *
from .resize import *
from .patches import *
from .io import *
from .toy import *
from .shards import *
