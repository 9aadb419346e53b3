//! External evaluator processes.
//!
//! Each evaluation gets a fresh working directory and its own process group.
//! On timeout the whole group is killed with SIGKILL; after a normal exit the
//! group is killed too, so background children of the evaluator never outlive
//! the evaluation. Directories of successful evaluations are removed, failed
//! ones are kept for inspection and their path is appended to the log.

use std::io::Read;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::model::{Direction, EvaluationResult, FailureReason};

use super::{parse_result, Evaluator, Postprocess};

/// Upper bound on the time between the deadline and the process group being gone.
pub const KILL_GRACE_S: f64 = 5.0;

const CANDIDATE_FILE: &str = "candidate.txt";
const LOG_TAIL_BYTES: usize = 2048;

#[derive(Debug, Clone)]
pub struct ExternalEvaluator {
    pub command: String,
    pub args: Vec<String>,
    pub timeout_s: f64,
    pub direction: Direction,
    pub workdir_root: Option<PathBuf>,
    pub postprocess: Postprocess,
}

impl ExternalEvaluator {
    pub fn new(command: impl Into<String>, args: Vec<String>, timeout_s: f64, direction: Direction) -> Self {
        ExternalEvaluator {
            command: command.into(),
            args,
            timeout_s,
            direction,
            workdir_root: None,
            postprocess: Postprocess::default(),
        }
    }

    pub fn with_workdir_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.workdir_root = Some(root.into());
        self
    }

    /// Fails unless the command is an executable path or found on `PATH`.
    pub fn check_command(&self) -> Result<()> {
        if resolve_command(&self.command).is_some() {
            Ok(())
        } else {
            Err(Error::Startup(format!(
                "command {:?} not found or not executable",
                self.command
            )))
        }
    }
}

impl Evaluator for ExternalEvaluator {
    fn direction(&self) -> Direction {
        self.direction
    }

    fn evaluate(&self, program: &str) -> EvaluationResult {
        evaluate_external(program, self)
    }
}

fn resolve_command(command: &str) -> Option<PathBuf> {
    let is_exec = |p: &Path| {
        use std::os::unix::fs::PermissionsExt;
        p.metadata()
            .map(|m| m.is_file() && m.permissions().mode() & 0o111 != 0)
            .unwrap_or(false)
    };
    if command.contains('/') {
        let p = PathBuf::from(command);
        return is_exec(&p).then_some(p);
    }
    std::env::var_os("PATH").and_then(|paths| {
        std::env::split_paths(&paths)
            .map(|dir| dir.join(command))
            .find(|p| is_exec(p))
    })
}

struct Finished {
    status: Option<ExitStatus>,
    timed_out: bool,
    stdout: Vec<u8>,
    stderr: Vec<u8>,
    duration_s: f64,
}

/// Runs one external evaluation. Never panics on evaluator misbehaviour;
/// every failure mode is reported through `failure_reason`.
pub fn evaluate_external(program: &str, spec: &ExternalEvaluator) -> EvaluationResult {
    let direction = spec.direction;
    let mut builder = tempfile::Builder::new();
    builder.prefix("eval-");
    let dir = match &spec.workdir_root {
        Some(root) => builder.tempdir_in(root),
        None => builder.tempdir(),
    };
    let dir = match dir {
        Ok(d) => d,
        Err(e) => {
            return EvaluationResult::failed(
                FailureReason::Crash,
                direction,
                format!("cannot create working directory: {e}"),
            )
        }
    };
    let candidate = dir.path().join(CANDIDATE_FILE);
    if let Err(e) = std::fs::write(&candidate, program) {
        return EvaluationResult::failed(
            FailureReason::Crash,
            direction,
            format!("cannot write {}: {e}", candidate.display()),
        );
    }

    let result = match run_process(spec, dir.path(), &candidate) {
        Ok(done) => interpret(done, spec),
        Err(e) => EvaluationResult::failed(FailureReason::Crash, direction, e),
    };

    if result.valid {
        drop(dir);
        result
    } else {
        let kept = dir.keep();
        let log = format!("{}\nworkdir kept at {}", result.log_excerpt, kept.display());
        EvaluationResult {
            log_excerpt: log.trim_start().to_owned(),
            ..result
        }
    }
}

fn run_process(spec: &ExternalEvaluator, workdir: &Path, candidate: &Path) -> Result<Finished, String> {
    let timeout = Duration::from_secs_f64(spec.timeout_s);
    let start = Instant::now();
    let mut child = Command::new(&spec.command)
        .args(&spec.args)
        .arg(candidate)
        .current_dir(workdir)
        .env("EVAL_TIMEOUT_S", spec.timeout_s.to_string())
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0)
        .spawn()
        .map_err(|e| format!("failed to start {:?}: {e}", spec.command))?;
    let pgid = child.id() as libc::pid_t;

    let stdout = spawn_reader(child.stdout.take());
    let stderr = spawn_reader(child.stderr.take());

    let (status, timed_out) = wait_with_deadline(&mut child, pgid, start, timeout);
    let duration_s = start.elapsed().as_secs_f64();

    Ok(Finished {
        status,
        timed_out,
        stdout: stdout.join().unwrap_or_default(),
        stderr: stderr.join().unwrap_or_default(),
        duration_s,
    })
}

fn wait_with_deadline(
    child: &mut Child,
    pgid: libc::pid_t,
    start: Instant,
    timeout: Duration,
) -> (Option<ExitStatus>, bool) {
    let mut poll = Duration::from_millis(1);
    let timed_out = loop {
        if has_exited(pgid) {
            break false;
        }
        let elapsed = start.elapsed();
        if elapsed >= timeout {
            break true;
        }
        thread::sleep(poll.min(timeout - elapsed));
        poll = (poll * 2).min(Duration::from_millis(25));
    };
    // the leader is still unreaped here, so its pid (= pgid) cannot be recycled
    kill_group(pgid);
    (child.wait().ok(), timed_out)
}

/// Non-reaping exit check, so the group id stays reserved until `wait`.
fn has_exited(pid: libc::pid_t) -> bool {
    // SAFETY: `info` is a plain C struct written by waitid; WNOWAIT leaves the child waitable.
    unsafe {
        let mut info: libc::siginfo_t = std::mem::zeroed();
        let rc = libc::waitid(
            libc::P_PID,
            pid as libc::id_t,
            &mut info,
            libc::WEXITED | libc::WNOHANG | libc::WNOWAIT,
        );
        rc == 0 && info.si_pid() != 0 || rc == -1
    }
}

fn kill_group(pgid: libc::pid_t) {
    // SAFETY: killpg only sends a signal; ESRCH for an empty group is expected.
    unsafe {
        libc::killpg(pgid, libc::SIGKILL);
    }
}

fn spawn_reader<R: Read + Send + 'static>(pipe: Option<R>) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(mut p) = pipe {
            let _ = p.read_to_end(&mut buf);
        }
        buf
    })
}

fn tail(bytes: &[u8]) -> String {
    let start = bytes.len().saturating_sub(LOG_TAIL_BYTES);
    String::from_utf8_lossy(&bytes[start..]).trim().to_owned()
}

fn interpret(done: Finished, spec: &ExternalEvaluator) -> EvaluationResult {
    let direction = spec.direction;
    let stderr_tail = tail(&done.stderr);
    let with_timing = |mut r: EvaluationResult| {
        r.duration_s = done.duration_s;
        r
    };

    if done.timed_out {
        return with_timing(EvaluationResult::failed(
            FailureReason::Timeout,
            direction,
            format!("killed after {}s timeout\n{stderr_tail}", spec.timeout_s),
        ));
    }
    match done.status {
        Some(s) if s.success() => {}
        other => {
            let what = match other {
                Some(s) => format!("evaluator exited with {s}"),
                None => "evaluator status unavailable".to_owned(),
            };
            return with_timing(EvaluationResult::failed(
                FailureReason::Crash,
                direction,
                format!("{what}\n{stderr_tail}"),
            ));
        }
    }

    let stdout = String::from_utf8_lossy(&done.stdout);
    let last = stdout.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("");
    match parse_result(last, direction) {
        Ok(mut r) => {
            r.log_excerpt = stderr_tail;
            with_timing(spec.postprocess.apply(r))
        }
        Err(e) => with_timing(EvaluationResult::failed(
            FailureReason::Protocol,
            direction,
            format!("{e}\nstdout tail: {}\n{stderr_tail}", tail(stdout.as_bytes())),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sh(script: &str, timeout_s: f64) -> ExternalEvaluator {
        ExternalEvaluator::new("sh", vec!["-c".into(), script.into(), "sh".into()], timeout_s, Direction::Maximize)
    }

    #[test]
    fn echo_protocol() {
        let r = evaluate_external("x", &sh(r#"echo '{"valid":true,"score":1.0}'"#, 10.0));
        assert!(r.valid, "{r:?}");
        assert_eq!(r.score, 1.0);
    }

    #[test]
    fn last_line_wins_and_candidate_is_passed() {
        let script = r#"echo "log line"; test "$(basename "$1")" = candidate.txt || exit 3; n=$(cat "$1"); echo "{\"valid\":true,\"score\":$n}""#;
        let r = evaluate_external("42.5", &sh(script, 10.0));
        assert!(r.valid, "{r:?}");
        assert_eq!(r.score, 42.5);
    }

    #[test]
    fn env_carries_timeout() {
        let r = evaluate_external("", &sh(r#"echo "{\"valid\":true,\"score\":$EVAL_TIMEOUT_S}""#, 7.5));
        assert_eq!(r.score, 7.5);
    }

    #[test]
    fn failure_modes() {
        let crash = evaluate_external("", &sh("echo boom >&2; exit 2", 10.0));
        assert_eq!(crash.failure_reason, Some(FailureReason::Crash));
        assert!(crash.log_excerpt.contains("boom"));

        let prose = evaluate_external("", &sh("echo the score is great", 10.0));
        assert_eq!(prose.failure_reason, Some(FailureReason::Protocol));

        let declared = evaluate_external("", &sh(r#"echo '{"valid":false,"score":0}'"#, 10.0));
        assert_eq!(declared.failure_reason, Some(FailureReason::Constraint));

        let missing = evaluate_external("", &ExternalEvaluator::new("/nonexistent/eval", vec![], 1.0, Direction::Maximize));
        assert_eq!(missing.failure_reason, Some(FailureReason::Crash));
    }

    #[test]
    fn timeout_kills_and_reports() {
        let r = evaluate_external("", &sh("sleep 5", 0.3));
        assert_eq!(r.failure_reason, Some(FailureReason::Timeout));
        assert!(r.duration_s >= 0.3 && r.duration_s < 0.3 + KILL_GRACE_S, "{}", r.duration_s);
    }

    #[test]
    fn workdir_removed_on_success_kept_on_failure() {
        let root = tempfile::tempdir().unwrap();
        let ok = sh(r#"echo '{"valid":true,"score":1}'"#, 10.0).with_workdir_root(root.path());
        evaluate_external("", &ok);
        assert_eq!(std::fs::read_dir(root.path()).unwrap().count(), 0);

        let bad = sh("exit 1", 10.0).with_workdir_root(root.path());
        let r = evaluate_external("payload", &bad);
        let kept: Vec<_> = std::fs::read_dir(root.path()).unwrap().collect();
        assert_eq!(kept.len(), 1);
        let kept = kept[0].as_ref().unwrap().path();
        assert_eq!(std::fs::read_to_string(kept.join(CANDIDATE_FILE)).unwrap(), "payload");
        assert!(r.log_excerpt.contains("workdir kept"));
    }

    #[test]
    fn resolves_commands() {
        assert!(resolve_command("sh").is_some());
        assert!(resolve_command("/bin/sh").is_some());
        assert!(resolve_command("no-such-binary-here").is_none());
    }
}
