import json
import logging
from functools import partial
from pathlib import Path

import anyio
import anyio.to_thread
import mcp.types as types
from mcp.server.lowlevel import Server

from . import experiment
from .config import INCOMPATIBLE, METHODS, load_config
from .errors import SpadeError

logger = logging.getLogger(__name__)

_CONFIG_PROPERTIES = {
    "config": {
        "type": "string",
        "description": "Path to a JSON experiment config",
    },
    "overrides": {
        "type": "object",
        "description": "Config overrides as dotted keys, e.g. {\"train.alpha\": 0.5}",
    },
}

TOOLS = [
    types.Tool(
        name="prepare_scenario",
        description="Generates labeled/unlabeled/test CSVs and a manifest for one seed",
        inputSchema={
            "type": "object",
            "required": ["seed", "out"],
            "properties": {
                **_CONFIG_PROPERTIES,
                "seed": {"type": "integer", "description": "Scenario seed"},
                "out": {"type": "string", "description": "Experiment directory"},
            },
        },
    ),
    types.Tool(
        name="train_model",
        description="Trains the configured method on a prepared scenario directory",
        inputSchema={
            "type": "object",
            "required": ["scenario_dir"],
            "properties": {
                **_CONFIG_PROPERTIES,
                "scenario_dir": {"type": "string", "description": "Scenario directory"},
            },
        },
    ),
    types.Tool(
        name="evaluate_run",
        description="Computes overall, given-type and missed-type AUC of a checkpoint",
        inputSchema={
            "type": "object",
            "required": ["checkpoint", "scenario_dir"],
            "properties": {
                "checkpoint": {"type": "string", "description": "model.json path"},
                "scenario_dir": {"type": "string", "description": "Scenario directory"},
            },
        },
    ),
    types.Tool(
        name="list_methods",
        description="Lists training methods and the scenarios each cannot run on",
        inputSchema={"type": "object", "properties": {}},
    ),
]


def _require(arguments: dict, *names: str) -> None:
    for name in names:
        if name not in arguments:
            raise ValueError(f"Missing required argument '{name}'")


def _text(payload) -> list[types.TextContent]:
    if not isinstance(payload, str):
        payload = json.dumps(payload, indent=2, sort_keys=True)
    return [types.TextContent(type="text", text=payload)]


async def handle_tool_call(
    name: str, arguments: dict
) -> list[types.TextContent | types.ImageContent | types.EmbeddedResource]:
    arguments = arguments or {}
    if name == "list_methods":
        return _text(
            {
                "methods": list(METHODS),
                "excluded": {k: sorted(v) for k, v in INCOMPATIBLE.items()},
            }
        )
    if name == "prepare_scenario":
        _require(arguments, "seed", "out")
        cfg = load_config(arguments.get("config"), arguments.get("overrides"))
        job = partial(
            experiment.prepare, cfg, int(arguments["seed"]), Path(arguments["out"])
        )
    elif name == "train_model":
        _require(arguments, "scenario_dir")
        cfg = load_config(arguments.get("config"), arguments.get("overrides"))
        job = partial(experiment.train, cfg, Path(arguments["scenario_dir"]))
    elif name == "evaluate_run":
        _require(arguments, "checkpoint", "scenario_dir")
        job = partial(
            experiment.evaluate,
            Path(arguments["checkpoint"]),
            Path(arguments["scenario_dir"]),
        )
    else:
        raise ValueError(f"Unknown tool: {name}")

    logger.info(f"Tool call {name}")
    try:
        result = await anyio.to_thread.run_sync(job)
    except SpadeError as exc:
        raise ValueError(str(exc)) from exc
    if isinstance(result, Path):
        return _text(str(result))
    return _text(result.model_dump_json(indent=2))


def create_server() -> Server:
    app = Server("spade-anomaly")

    @app.call_tool()
    async def call_tool(
        name: str, arguments: dict
    ) -> list[types.TextContent | types.ImageContent | types.EmbeddedResource]:
        return await handle_tool_call(name, arguments)

    @app.list_tools()
    async def list_tools() -> list[types.Tool]:
        return TOOLS

    return app


def serve(port: int, transport: str) -> int:
    app = create_server()

    if transport == "sse":
        from mcp.server.sse import SseServerTransport
        from starlette.applications import Starlette
        from starlette.responses import Response
        from starlette.routing import Mount, Route

        sse = SseServerTransport("/messages/")

        async def handle_sse(request):
            async with sse.connect_sse(
                request.scope, request.receive, request._send
            ) as streams:
                await app.run(
                    streams[0], streams[1], app.create_initialization_options()
                )
            return Response()

        starlette_app = Starlette(
            debug=True,
            routes=[
                Route("/sse", endpoint=handle_sse, methods=["GET"]),
                Mount("/messages/", app=sse.handle_post_message),
            ],
        )

        import uvicorn

        logger.info(f"Serving SPADE tools over SSE on port {port}")
        uvicorn.run(starlette_app, host="0.0.0.0", port=port)
    else:
        from mcp.server.stdio import stdio_server

        async def arun():
            async with stdio_server() as streams:
                await app.run(
                    streams[0], streams[1], app.create_initialization_options()
                )

        anyio.run(arun)

    return 0
