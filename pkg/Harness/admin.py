from django.contrib import admin
from django.utils.translation import gettext_lazy as _
from import_export.admin import ImportExportModelAdmin

from .models import ExperimentRun, FoldResult


class FoldResultInline(admin.TabularInline):
    model = FoldResult
    extra = 0
    fields = ('fold', 'acc', 'f1', 'precision', 'spec', 'sens', 'balanced_acc')
    readonly_fields = fields
    can_delete = False


@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    list_display = ('name', 'design', 'seed', 'status', 'failed_stage', 'created_at')
    list_filter = ('status', 'design', 'created_at')
    search_fields = ('name', 'output_dir')
    readonly_fields = ('created_at', 'updated_at')
    inlines = (FoldResultInline,)
    list_per_page = 15

    fieldsets = (
        (_('Run Info'), {
            'fields': ('name', 'design', 'seed', 'output_dir'),
        }),
        (_('Status'), {
            'fields': ('status', 'failed_stage'),
        }),
        (_('Config'), {
            'fields': ('config',),
        }),
        (_('Timestamps'), {
            'fields': ('created_at', 'updated_at'),
        }),
    )


@admin.register(FoldResult)
class FoldResultAdmin(ImportExportModelAdmin, admin.ModelAdmin):
    list_display = ('run', 'fold', 'acc', 'f1', 'precision', 'spec', 'sens', 'balanced_acc')
    list_filter = ('run__design', 'fold')
    search_fields = ('run__name',)
    readonly_fields = ('created_at', 'updated_at')
    ordering = ('run', 'fold')
    list_per_page = 15

    fieldsets = (
        (_('Fold Info'), {
            'fields': ('run', 'fold'),
        }),
        (_('Metrics'), {
            'fields': ('acc', 'f1', 'precision', 'spec', 'sens', 'balanced_acc'),
        }),
        (_('Timestamps'), {
            'fields': ('created_at', 'updated_at'),
        }),
    )
