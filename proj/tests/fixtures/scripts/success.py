print('training')
print('METRIC accuracy=0.9')
