"""Multi-modal stance detection with targeted textual and visual prompts.

Heavy submodules import numpy; keep this namespace light so the CLI can
configure thread environment variables before numpy loads.
"""

__version__ = "0.1.0"
