import sys
print('starting')
sys.stderr.write('boom\n')
sys.exit(3)
