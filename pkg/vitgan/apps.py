from django.apps import AppConfig


class VitganConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'vitgan'
    verbose_name = 'ViT-I-GAN colourisation'
