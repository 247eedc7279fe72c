from . import layers
from . import network
from . import optim
from . import checkpoint
from . import gradcheck
