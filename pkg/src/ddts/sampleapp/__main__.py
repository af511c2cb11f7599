import sys

from . import install

if len(sys.argv) != 2:
    sys.exit("usage: python -m ddts.sampleapp DEST")
print(install(sys.argv[1]).resolve())
