# Generated by Django 4.2 on 2026-10-19 09:12

from django.db import migrations, models
import django.db.models.deletion


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('created_at', models.DateTimeField(auto_now_add=True, verbose_name='created date')),
                ('updated_at', models.DateTimeField(auto_now=True, verbose_name='updated date')),
                ('name', models.CharField(max_length=100, verbose_name='name')),
                ('output_dir', models.CharField(max_length=500, unique=True, verbose_name='output directory')),
                ('seed', models.PositiveBigIntegerField(default=0, verbose_name='root seed')),
                ('design', models.CharField(blank=True, max_length=100, verbose_name='design')),
                ('config', models.JSONField(default=dict, verbose_name='config')),
                ('status', models.CharField(choices=[('running', 'Running'), ('ok', 'Finished'), ('failed', 'Failed')], default='running', max_length=10, verbose_name='status')),
                ('failed_stage', models.CharField(blank=True, max_length=20, verbose_name='failed stage')),
            ],
            options={
                'verbose_name': 'Experiment Run',
                'verbose_name_plural': 'Experiment Runs',
                'ordering': ('-created_at',),
            },
        ),
        migrations.CreateModel(
            name='FoldResult',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('created_at', models.DateTimeField(auto_now_add=True, verbose_name='created date')),
                ('updated_at', models.DateTimeField(auto_now=True, verbose_name='updated date')),
                ('fold', models.PositiveSmallIntegerField(verbose_name='fold')),
                ('acc', models.FloatField(verbose_name='accuracy')),
                ('f1', models.FloatField(verbose_name='F1')),
                ('precision', models.FloatField(verbose_name='precision')),
                ('spec', models.FloatField(verbose_name='specificity')),
                ('sens', models.FloatField(verbose_name='sensitivity')),
                ('balanced_acc', models.FloatField(verbose_name='balanced accuracy')),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='folds', to='Harness.experimentrun', verbose_name='run')),
            ],
            options={
                'verbose_name': 'Fold Result',
                'verbose_name_plural': 'Fold Results',
                'ordering': ('run', 'fold'),
            },
        ),
        migrations.AddConstraint(
            model_name='foldresult',
            constraint=models.UniqueConstraint(fields=('run', 'fold'), name='unique_fold_per_run'),
        ),
    ]
