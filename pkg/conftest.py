# Repository root on sys.path so tests import the top-level packages as lab.py does.
