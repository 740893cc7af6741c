"""Run bookkeeping in the database, shown in the admin."""
import logging

from django.db import transaction

from .models import ExperimentRun, FoldResult

logger = logging.getLogger(__name__)


def _run_for(config, root):
    run, _created = ExperimentRun.objects.update_or_create(
        output_dir=str(root),
        defaults={
            'name': config['name'],
            'seed': config.seed,
            'design': config['design'].get('name', ''),
            'config': config.to_dict(),
        },
    )
    return run


def mark_run(config, root, status, stage=''):
    run = _run_for(config, root)
    run.status = status
    run.failed_stage = stage if status == 'failed' else ''
    run.save(update_fields=['status', 'failed_stage', 'updated_at'])
    return run


@transaction.atomic
def record_metrics(config, root, records):
    """Replace the run's fold rows with ``records`` (fold numbers start at 1)."""
    run = _run_for(config, root)
    run.folds.all().delete()
    FoldResult.objects.bulk_create([
        FoldResult(run=run, fold=index + 1, **record.to_dict())
        for index, record in enumerate(records)
    ])
    logger.info("Recorded %d fold results for run %s", len(records), run)
    return run
