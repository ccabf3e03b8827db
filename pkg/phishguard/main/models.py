import json

from django.db import models


class ClassificationLogManager(models.Manager):
    def record(self, result):
        v = result.verdict
        return self.create(
            email_id=result.email_id,
            model_key=result.model_key,
            rag_enabled=result.rag_enabled,
            threat_enabled=result.threat_enabled,
            decision=v.classification_decision,
            phishing_score=v.phishing_score,
            risk=v.risk,
            fallback_used=result.fallback_used,
            result_json=result.to_json())


class ClassificationLog(models.Model):
    email_id = models.CharField(max_length=256, db_index=True)
    model_key = models.CharField(max_length=64)
    rag_enabled = models.BooleanField(default=True)
    threat_enabled = models.BooleanField(default=True)
    decision = models.CharField(max_length=16)
    phishing_score = models.PositiveSmallIntegerField(default=0)
    risk = models.CharField(max_length=8)
    fallback_used = models.BooleanField(default=False)
    result_json = models.TextField()
    created = models.DateTimeField(auto_now_add=True, editable=False)

    objects = ClassificationLogManager()

    class Meta:
        ordering = ('-created',)

    def __str__(self):
        return '{} {} ({}/10)'.format(self.email_id, self.decision,
                                      self.phishing_score)

    def result(self):
        return json.loads(self.result_json)

    def is_phishing(self):
        return self.decision == 'phishing'
