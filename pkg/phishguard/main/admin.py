from django.contrib import admin

from phishguard.main.models import ClassificationLog


class ClassificationLogAdmin(admin.ModelAdmin):
    class Meta:
        model = ClassificationLog

    search_fields = ("email_id", "model_key")
    list_display = ("email_id", "model_key", "decision", "phishing_score",
                    "risk", "rag_enabled", "fallback_used", "created")
    list_filter = ("decision", "model_key", "fallback_used", "rag_enabled")
    readonly_fields = ("result_json", "created")


admin.site.register(ClassificationLog, ClassificationLogAdmin)
