from . import geometry
from . import features
