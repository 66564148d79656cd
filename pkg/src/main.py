"""
Screenfolio - Screened precision-matrix portfolios

Entry point script for running Screenfolio (also the PyInstaller target).
"""

from screenfolio.app import main

if __name__ == "__main__":
    main()
