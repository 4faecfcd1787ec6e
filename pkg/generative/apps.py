from django.apps import AppConfig


class GenerativeConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "generative"
    verbose_name = "AE, VAE and WGAN-GP generators"
