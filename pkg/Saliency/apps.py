from django.apps import AppConfig


class SaliencyConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'Saliency'
    verbose_name = 'Saliency maps'
