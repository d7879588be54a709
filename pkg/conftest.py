import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'MSAccel.settings')
django.setup()
