from . import config
from . import wav
from . import manifest
from . import reports
