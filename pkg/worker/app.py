from celery import Celery
from kombu import Queue

from mnarcorr.config import get_settings

settings = get_settings()
REPLICATE_QUEUE_NAME = settings.replicate_queue


celery_app = Celery(
    "mnarcorr",
    broker=settings.redis_url,
    backend=settings.result_backend,
    include=["worker.tasks.replicates"],
)

celery_app.conf.task_default_queue = "celery"
celery_app.conf.task_queues = (
    Queue("celery"),
    Queue(REPLICATE_QUEUE_NAME),
)
celery_app.conf.task_routes = {"simulation.run_replicate": {"queue": REPLICATE_QUEUE_NAME}}
celery_app.conf.task_serializer = "json"
celery_app.conf.result_serializer = "json"


@celery_app.task(name="health.ping")
def ping() -> str:
    return "pong"
