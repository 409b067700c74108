from django.db import models


class TrainingRun(models.Model):
    STATUS_CHOICES = [
        ('pending', 'Pending'),
        ('running', 'Running'),
        ('completed', 'Completed'),
        ('failed', 'Failed'),
    ]

    run_dir = models.CharField(max_length=500)
    variant = models.CharField(max_length=20)
    seed = models.BigIntegerField(default=0)
    config = models.JSONField(help_text="Fully resolved run config, as echoed to config.json")
    status = models.CharField(max_length=20, choices=STATUS_CHOICES, default='pending')
    steps = models.PositiveIntegerField(default=0, help_text="Global step count reached")
    final_checkpoint = models.CharField(max_length=500, blank=True)
    resumed_from = models.CharField(max_length=500, blank=True)
    error = models.TextField(blank=True)
    started_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)

    def __str__(self):
        return f"{self.variant} run in {self.run_dir} ({self.status})"

    class Meta:
        ordering = ['-started_at']
        indexes = [
            models.Index(fields=['status'], name='vitgan_run_status_idx'),
        ]


class FidEvaluation(models.Model):
    real_path = models.CharField(max_length=500)
    generated_path = models.CharField(
        max_length=500,
        help_text="Directory of generated images, or the gray directory a checkpoint colourised",
    )
    checkpoint = models.CharField(max_length=500, blank=True)
    backend = models.CharField(max_length=20)
    n_real = models.PositiveIntegerField()
    n_generated = models.PositiveIntegerField()
    skipped = models.PositiveIntegerField(default=0)
    value = models.FloatField()
    evaluated_at = models.DateTimeField(auto_now_add=True)

    def __str__(self):
        return f"FID {self.value:.4f} ({self.backend})"

    class Meta:
        ordering = ['-evaluated_at']
