"""Entry point for ``python -m pywmlab``."""

from .cli import main

if __name__ == "__main__":
    main()
