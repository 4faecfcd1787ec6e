import os

import django

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "genreg.settings")
django.setup()
