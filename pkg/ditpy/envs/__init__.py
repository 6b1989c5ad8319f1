from ._render import *
from ._fork2d import *
from ._pickplace import *
from ._episodes import *
