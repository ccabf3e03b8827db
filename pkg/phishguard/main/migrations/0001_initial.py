# flake8: noqa
from django.db import models, migrations


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='ClassificationLog',
            fields=[
                ('id', models.AutoField(verbose_name='ID', serialize=False, auto_created=True, primary_key=True)),
                ('email_id', models.CharField(db_index=True, max_length=256)),
                ('model_key', models.CharField(max_length=64)),
                ('rag_enabled', models.BooleanField(default=True)),
                ('threat_enabled', models.BooleanField(default=True)),
                ('decision', models.CharField(max_length=16)),
                ('phishing_score', models.PositiveSmallIntegerField(default=0)),
                ('risk', models.CharField(max_length=8)),
                ('fallback_used', models.BooleanField(default=False)),
                ('result_json', models.TextField()),
                ('created', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'ordering': ('-created',),
            },
        ),
    ]
