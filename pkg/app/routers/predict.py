from fastapi import APIRouter

from app.schemas.predict import HealthResponse, PredictRequest, PredictResponse
from app.services.predict_service import PredictService

router = APIRouter()


@router.post("/predict", response_model=PredictResponse)
def predict_episode(request: PredictRequest):
    """
    Puntúa un episodio few-shot.

    El soporte (SMILES o features + etiqueta) define la tarea; la respuesta trae
    p(y = +1) para cada molécula de consulta, en el orden recibido.
    """
    return PredictService().predict(request)


@router.get("/health", response_model=HealthResponse)
def health():
    return PredictService().health()
