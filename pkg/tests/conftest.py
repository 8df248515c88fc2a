import os
import sys

# make the sibling oracle helpers importable regardless of invocation dir
sys.path.insert(0, os.path.dirname(__file__))
