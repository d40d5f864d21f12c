import logging

import click
import uvicorn

from .app import create_app
from .runtime import ServerConfig


@click.command()
@click.option("--model", required=True, help="Model id or local path for the causal LM.")
@click.option("--device", default="cpu", show_default=True)
@click.option("--max-prompt-chars", type=int, default=4096, show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--pool", "pool_path", default=None, type=click.Path(exists=True),
              help="Word pool JSON whose first-token map is logged and served in /info.")
def main(model, device, max_prompt_chars, port, host, pool_path):
    """Serve a causal LM's next-token logits over POST /logits and GET /info."""
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    config = ServerConfig(
        model=model, device=device, max_prompt_chars=max_prompt_chars,
        port=port, pool_path=pool_path,
    )
    uvicorn.run(create_app(config), host=host, port=config.port)


if __name__ == "__main__":
    main()
