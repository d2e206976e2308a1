"""Start a small local modeling service for UI development and tests.

Builds a tiny procedural dataset in memory (a few seconds) and serves it on
the given port.  Prints "READY <port>" on stdout once the server accepts
connections so test harnesses can wait for it.

Usage: python3 dev_server.py [port]
"""

import sys
import threading

sys.path.insert(0, __file__.rsplit("/", 3)[0] + "/src")

import uvicorn

from sketchface.dataset import DatasetConfig, build_dataset
from sketchface.nn.network import RegressionNet
from sketchface.nn.train import net_config_for
from sketchface.render import RenderOptions
from sketchface.service import create_app
from sketchface.session import SessionAssets


def main():
    port = int(sys.argv[1]) if len(sys.argv) > 1 else 8642
    ds = build_dataset(DatasetConfig(
        n_base_identities=4,
        exagg_scales=(1.0, 1.6),
        n_expressions=4,
        vertex_budget=729,
        r_id=6,
        r_expr=3,
        shape_r_id=6,
        shape_r_expr=3,
        n_interpolated=10,
        seed=11,
        render=RenderOptions.clean(),
    ))
    net = RegressionNet(net_config_for(ds, "shape_only", fc_width=32), seed=0)

    def make_assets():
        return SessionAssets(model=ds.model, encoder=ds.encoder, net=net,
                             template=ds.template, curves=ds.curves)

    app = create_app(make_assets)
    config = uvicorn.Config(app, host="127.0.0.1", port=port, log_level="warning")
    server = uvicorn.Server(config)

    def announce():
        while not server.started:
            threading.Event().wait(0.05)
        print(f"READY {port}", flush=True)

    threading.Thread(target=announce, daemon=True).start()
    server.run()


if __name__ == "__main__":
    main()
