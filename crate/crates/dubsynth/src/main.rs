use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};
use dubsynth::estimate::{estimate, export_traces};
use dubsynth::scenario::Scenario;
use dubsynth::service::{AcceptRequest, Service, StepRequest};
use dubsynth::store::Store;
use dubsynth::{ServiceError, API_SCHEMA};
use dubsynth_core::strategy::SimSetup;
use dubsynth_core::synthesis::solve;
use dubsynth_core::UpdateRule;
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "dubsynth", version, about = "Negotiate, deploy and simulate noisy Dubins vehicle policies")]
struct Cli {
    /// Session store directory.
    #[arg(long, global = true, env = "DUBSYNTH_DATA", default_value = "dubsynth-data")]
    data: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the MDP, solve the formula and open a session.
    Solve { scenario: PathBuf },
    /// List relaxation candidates, best first.
    Relax {
        session: String,
        #[arg(long, default_value_t = 10)]
        limit: usize,
    },
    /// Accept a candidate id, or `keep` for the current formula.
    Accept {
        session: String,
        candidate: String,
        /// Deploy right after accepting, with this seed.
        #[arg(long)]
        deploy: Option<u64>,
    },
    /// Start or resume the deployment.
    Deploy {
        session: String,
        #[arg(long)]
        seed: u64,
        /// Run every remaining stage.
        #[arg(long)]
        auto: bool,
    },
    /// Run deployment stages one at a time.
    Step {
        session: String,
        /// Noise of the stage instead of a seeded draw.
        #[arg(long, allow_hyphen_values = true)]
        eps: Option<f64>,
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Apply an environment change given as an update-rule JSON file.
    Event { session: String, rule: PathBuf },
    /// Print a session snapshot, or only its event log.
    Show {
        session: String,
        #[arg(long)]
        events: bool,
    },
    /// Monte Carlo estimate of the synthesized policy.
    Simulate {
        scenario: PathBuf,
        #[arg(long, default_value_t = 2000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write every trial as a JSON line.
        #[arg(long)]
        traces: Option<PathBuf>,
        /// Include dense positions in the traces.
        #[arg(long)]
        positions: bool,
    },
    /// Serve the HTTP/JSON protocol.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

fn print(value: impl Serialize) -> anyhow::Result<()> {
    let mut v = serde_json::to_value(value)?;
    if let Value::Object(map) = &mut v {
        map.insert("schema".into(), json!(API_SCHEMA));
    }
    let out = io::stdout();
    let mut out = out.lock();
    serde_json::to_writer_pretty(&mut out, &v)?;
    writeln!(out)?;
    Ok(())
}

fn summary(s: &dubsynth::Session) -> Value {
    json!({
        "id": s.id,
        "phase": s.phase,
        "revision": s.revision,
        "formula": s.formula,
        "states": s.mdp.states,
        "lower": s.lower,
        "upper": s.upper,
        "stage": s.deployment.as_ref().map_or(0, |d| d.stage),
        "verdict": s.deployment.as_ref().and_then(|d| d.verdict),
    })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let service = || -> anyhow::Result<Service> { Ok(Service::new(Store::open(&cli.data)?)) };
    match cli.cmd {
        Cmd::Solve { ref scenario } => {
            let sc = Scenario::load(scenario)?;
            let s = service()?.create(sc)?;
            print(summary(&s))
        }
        Cmd::Relax { ref session, limit } => print(service()?.candidates(session, limit)?),
        Cmd::Accept {
            ref session,
            ref candidate,
            deploy,
        } => {
            let req = AcceptRequest {
                candidate: (candidate != "keep").then(|| candidate.clone()),
                deploy,
            };
            print(summary(&service()?.accept(session, &req)?))
        }
        Cmd::Deploy { ref session, seed, auto } => {
            let svc = service()?;
            svc.deploy(session, seed)?;
            let stages = if auto { svc.run(session)? } else { Vec::new() };
            let s = svc.get(session)?;
            print(json!({ "session": summary(&s), "stages": stages }))
        }
        Cmd::Step {
            ref session,
            eps,
            count,
        } => {
            let svc = service()?;
            let mut outcomes = Vec::new();
            for _ in 0..count {
                let o = svc.step(session, &StepRequest { eps })?;
                let closed = o.verdict.is_some();
                outcomes.push(o);
                if closed {
                    break;
                }
            }
            print(json!({ "steps": outcomes }))
        }
        Cmd::Event { ref session, ref rule } => {
            let text = std::fs::read_to_string(rule).with_context(|| format!("reading {}", rule.display()))?;
            let rule: UpdateRule = serde_json::from_str(&text).map_err(|e| ServiceError::Json {
                context: rule.display().to_string(),
                source: e,
            })?;
            let s = service()?.event(session, &rule)?;
            print(json!({ "session": summary(&s), "candidates": s.candidates }))
        }
        Cmd::Show { ref session, events } => {
            let s = service()?.get(session)?;
            if events {
                print(json!({ "id": s.id, "events": s.events }))
            } else {
                print(&s)
            }
        }
        Cmd::Simulate {
            ref scenario,
            trials,
            seed,
            ref traces,
            positions,
        } => {
            let sc = Scenario::load(scenario)?;
            let prepared = sc.prepare()?;
            let t0 = Instant::now();
            let mdp = prepared.build_mdp()?;
            let built = t0.elapsed().as_secs_f64();
            let sol = solve(&mdp, &prepared.compiled, sc.bound_scope);
            let setup = SimSetup::new(&prepared.env, &sc.vehicle, &mdp, &sol, &prepared.compiled);
            let est = match traces {
                Some(path) => {
                    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
                    let mut w = BufWriter::new(f);
                    let est = export_traces(&setup, trials, seed, positions, &mut w)?;
                    w.flush()?;
                    est
                }
                None => estimate(&setup, trials, seed)?,
            };
            print(json!({
                "states": mdp.len(),
                "build_seconds": built,
                "lower": sol.lower,
                "upper": sol.upper,
                "trials": est.trials,
                "successes": est.successes,
                "frequency": est.frequency(),
                "interval95": est.interval95(),
                "wilson3": est.wilson(3.0),
            }))
        }
        Cmd::Serve { ref addr } => {
            let svc = Arc::new(service()?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                eprintln!("listening on {}", listener.local_addr()?);
                axum::serve(listener, dubsynth::http::router(svc)).await?;
                anyhow::Ok(())
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match e.downcast_ref::<ServiceError>() {
                Some(se) => eprintln!("error [{}]: {se}", se.stage()),
                None => eprintln!("error: {e:#}"),
            }
            ExitCode::from(1)
        }
    }
}
