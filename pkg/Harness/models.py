from django.db import models
from django.utils.translation import gettext_lazy as _

from Master.models import TimeStamp


class ExperimentRun(TimeStamp):
    STATUS_CHOICES = (
        ('running', _("Running")),
        ('ok', _("Finished")),
        ('failed', _("Failed")),
    )
    name = models.CharField(verbose_name=_("name"), max_length=100)
    output_dir = models.CharField(verbose_name=_("output directory"), max_length=500, unique=True)
    seed = models.PositiveBigIntegerField(verbose_name=_("root seed"), default=0)
    design = models.CharField(verbose_name=_("design"), max_length=100, blank=True)
    config = models.JSONField(verbose_name=_("config"), default=dict)
    status = models.CharField(verbose_name=_("status"), max_length=10, choices=STATUS_CHOICES, default='running')
    failed_stage = models.CharField(verbose_name=_("failed stage"), max_length=20, blank=True)

    class Meta:
        verbose_name = _("Experiment Run")
        verbose_name_plural = _("Experiment Runs")
        ordering = ('-created_at',)

    def __str__(self):
        return f"{self.name} (seed {self.seed})"


class FoldResult(TimeStamp):
    run = models.ForeignKey(ExperimentRun, on_delete=models.CASCADE, related_name='folds',
                            verbose_name=_("run"))
    fold = models.PositiveSmallIntegerField(verbose_name=_("fold"))
    acc = models.FloatField(verbose_name=_("accuracy"))
    f1 = models.FloatField(verbose_name=_("F1"))
    precision = models.FloatField(verbose_name=_("precision"))
    spec = models.FloatField(verbose_name=_("specificity"))
    sens = models.FloatField(verbose_name=_("sensitivity"))
    balanced_acc = models.FloatField(verbose_name=_("balanced accuracy"))

    class Meta:
        verbose_name = _("Fold Result")
        verbose_name_plural = _("Fold Results")
        ordering = ('run', 'fold')
        constraints = [
            models.UniqueConstraint(fields=('run', 'fold'), name='unique_fold_per_run'),
        ]

    def __str__(self):
        return f"{self.run.name} fold {self.fold}: acc {self.acc:.2f}"
