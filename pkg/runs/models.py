from django.db import models


class Run(models.Model):
    """One recorded CLI invocation (config in, summary out)."""

    command = models.CharField(max_length=32)
    config = models.JSONField(default=dict)
    output_path = models.CharField(max_length=500, blank=True, default="")
    created_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)

    state = models.CharField(max_length=32, default="PENDING")   # PENDING/STARTED/SUCCESS/FAILURE
    error = models.TextField(null=True, blank=True)
    summary = models.JSONField(null=True, blank=True)

    class Meta:
        ordering = ["-created_at"]

    def __str__(self):
        return f"{self.command} #{self.pk} ({self.state})"
