from . import rir
from . import mixing
from . import dataset
