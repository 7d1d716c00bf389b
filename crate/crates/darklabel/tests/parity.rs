//! Every operation is reachable from both front ends: each has an HTTP
//! route, the router answers it, and a CLI invocation maps to it.

mod common;

use std::collections::BTreeSet;

use clap::Parser;
use common::{call, mock, service, tempdir};
use darklabel::cli::{example_argv, Cli};
use darklabel::http::{router, ROUTES};
use darklabel::Op;

#[test]
fn every_op_has_a_route_and_a_cli_form() {
    let routed: BTreeSet<Op> = ROUTES.iter().map(|(_, _, op)| *op).collect();
    for op in Op::ALL {
        assert!(routed.contains(&op), "{} has no HTTP route", op.name());
        let argv = example_argv(op);
        let cli = Cli::try_parse_from(&argv).unwrap_or_else(|e| panic!("{argv:?}: {e}"));
        assert_eq!(cli.op(), op, "{argv:?}");
    }
    let names: BTreeSet<&str> = Op::ALL.iter().map(|o| o.name()).collect();
    assert_eq!(names.len(), Op::ALL.len());
}

#[test]
fn documented_subcommands_exist() {
    use clap::CommandFactory;
    let cmd = Cli::command();
    let subs: BTreeSet<&str> = cmd.get_subcommands().map(|s| s.get_name()).collect();
    for name in [
        "init", "import", "index", "context", "rules", "shots", "sample", "annotate", "validate",
        "promote", "eval", "optimize", "serve", "export",
    ] {
        assert!(subs.contains(name), "missing subcommand {name}");
    }
}

#[tokio::test]
async fn every_listed_route_is_served() {
    let (_dir, state) = tempdir();
    let app = router(service(&state, mock()));
    for (method, path, op) in ROUTES {
        let uri = path
            .replace("{id}", "absent")
            .replace("{n}", "1")
            .replace("{k}", "1");
        let r = call(&app, method, &uri, "").await;
        assert_ne!(
            r.status,
            axum::http::StatusCode::METHOD_NOT_ALLOWED,
            "{method} {path}"
        );
        // a 404 must come from the handler (unknown workbook), not the router
        if r.status == axum::http::StatusCode::NOT_FOUND {
            assert_eq!(
                r.json()["code"],
                "WorkbookNotFound",
                "{method} {path} ({})",
                op.name()
            );
        }
    }
}
