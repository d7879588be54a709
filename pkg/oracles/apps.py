from django.apps import AppConfig


class OraclesConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'oracles'
