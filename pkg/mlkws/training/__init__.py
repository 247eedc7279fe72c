from . import losses
from . import assignment
from . import state
from . import enhancement
from . import kws
from . import evaluation
from . import diagnostics
