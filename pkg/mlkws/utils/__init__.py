from . import signal_generator
