from django.apps import AppConfig


class MainConfig(AppConfig):
    name = 'phishguard.main'
    default_auto_field = 'django.db.models.AutoField'

    def ready(self):
        from phishguard.main import checks  # noqa: F401
