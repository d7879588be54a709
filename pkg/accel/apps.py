from django.apps import AppConfig


class AccelConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'accel'
