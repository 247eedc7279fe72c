from . import mlenet
from . import kws
