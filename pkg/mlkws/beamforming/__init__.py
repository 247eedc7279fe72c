from . import fixed
