# Generated by Django 5.2.5 on 2026-10-17 09:12

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='FidEvaluation',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('real_path', models.CharField(max_length=500)),
                ('generated_path', models.CharField(help_text='Directory of generated images, or the gray directory a checkpoint colourised', max_length=500)),
                ('checkpoint', models.CharField(blank=True, max_length=500)),
                ('backend', models.CharField(max_length=20)),
                ('n_real', models.PositiveIntegerField()),
                ('n_generated', models.PositiveIntegerField()),
                ('skipped', models.PositiveIntegerField(default=0)),
                ('value', models.FloatField()),
                ('evaluated_at', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'ordering': ['-evaluated_at'],
            },
        ),
        migrations.CreateModel(
            name='TrainingRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('run_dir', models.CharField(max_length=500)),
                ('variant', models.CharField(max_length=20)),
                ('seed', models.BigIntegerField(default=0)),
                ('config', models.JSONField(help_text='Fully resolved run config, as echoed to config.json')),
                ('status', models.CharField(choices=[('pending', 'Pending'), ('running', 'Running'), ('completed', 'Completed'), ('failed', 'Failed')], default='pending', max_length=20)),
                ('steps', models.PositiveIntegerField(default=0, help_text='Global step count reached')),
                ('final_checkpoint', models.CharField(blank=True, max_length=500)),
                ('resumed_from', models.CharField(blank=True, max_length=500)),
                ('error', models.TextField(blank=True)),
                ('started_at', models.DateTimeField(auto_now_add=True)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
            ],
            options={
                'ordering': ['-started_at'],
                'indexes': [models.Index(fields=['status'], name='vitgan_run_status_idx')],
            },
        ),
    ]
