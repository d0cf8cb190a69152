"""
podtherm pipeline entry point.
Runs FOM simulation, POD training, ROM simulation and validation from a run config.
"""

import sys

from rom_service.run import main

if __name__ == "__main__":
    sys.exit(main())
