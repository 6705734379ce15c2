""" Allows ``python -m comer``. """
import sys

from .cli import main

sys.exit(main())
