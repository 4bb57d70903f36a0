import logging
from fastapi import Request, Form, APIRouter
from fastapi.responses import HTMLResponse
from pydantic import ValidationError
from starlette.templating import Jinja2Templates
from pathlib import Path

from phisolver.config import RunConfig
from phisolver.errors import PhiSolverError
from phisolver.experiment import run

router = APIRouter()
logger = logging.getLogger(__name__)

BASE_DIR = Path(__file__).resolve().parent.parent

templates = Jinja2Templates(
    directory=str(BASE_DIR / "templates")
)


@router.get("/", response_class=HTMLResponse)
def index(request: Request):
    return templates.TemplateResponse(request, "index.html", {"config": RunConfig()})


@router.post("/run", response_class=HTMLResponse)
def run_form(request: Request, problem: str = Form("laplacian2d"), N: int = Form(20),
             scale: float = Form(1.0), t: float = Form(1.0), ells: str = Form("0"),
             method: str = Form("trha"), k: int = Form(30), q: int = Form(5),
             tol: float = Form(1e-8), oracle: str = Form("none")):
    logger.info("Web run requested: %s on %s (N=%d, t=%g, ells=%s)", method, problem, N, t, ells)

    try:
        cfg = RunConfig(problem=problem, N=N, scale=scale, t=t, ells=ells, method=method,
                        k=k, q=q, tol=tol, oracle=oracle)
    except ValidationError as e:
        return templates.TemplateResponse(
            request,
            "alert.html",
            {
                "type": "warning",
                "message": f"Некорректные параметры: {e.errors()[0]['msg']}",
            },
            status_code=422,
        )

    try:
        record = run(cfg)

    except PhiSolverError as e:
        logger.exception("Web run failed")
        return templates.TemplateResponse(
            request,
            "alert.html",
            {
                "type": "danger",
                "message": f"Ошибка при расчёте: {e}",
            },
            status_code=500,
        )

    return templates.TemplateResponse(
        request,
        "report.html",
        {
            "record": record,
        },
    )
