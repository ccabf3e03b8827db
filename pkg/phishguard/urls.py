from django.contrib import admin
from django.urls import path

from phishguard.main.views import ClassifyView, HealthView


admin.autodiscover()

urlpatterns = [
    path('admin/', admin.site.urls),
    path('classify', ClassifyView.as_view(), name='classify'),
    path('healthz', HealthView.as_view(), name='healthz'),
]
