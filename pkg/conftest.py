"""Configure Django before pytest collects the streams test modules."""
import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'stnetlab.settings')
django.setup()
