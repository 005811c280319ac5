//! Isolated mutant execution: clone the project, patch one file, run the
//! configured test command under timeouts and extract per-test outcomes.
//!
//! Two execution modes are supported. When the test command contains the
//! `{test}` placeholder it is run once per known test id, each under the
//! per-test timeout. Otherwise the command runs once for the whole suite
//! under the whole-run timeout and outcomes come from the result parser.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Read;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use quick_xml::events::Event;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use crate::exec::Execution;
use crate::mutate::ManifestEntry;

const VCS_DIRS: &[&str] = &[".git", ".hg", ".svn"];

/// Synthetic id used when a run fails before any test id can be known.
pub const RUN_TEST_ID: &str = "<run>";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("file missing in workspace: {0}")]
    FileMissing(PathBuf),
    #[error("workspace file {0} does not match the clean project at the mutated span")]
    CloneDirty(PathBuf),
    #[error("invalid project config: {0}")]
    Config(String),
    #[error("malformed JUnit report {path}: {message}")]
    Junit { path: PathBuf, message: String },
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResultParser {
    /// JUnit XML report file, or directory scanned for `*.xml`, relative to
    /// the workspace.
    JunitXml(String),
    /// Pattern applied per output line; its single capture group is the id of
    /// a failing test.
    Regex(String),
}

fn default_per_test_timeout() -> f64 {
    60.0
}

fn default_whole_run_timeout() -> f64 {
    900.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectConfig {
    pub root: PathBuf,
    pub test_command: String,
    pub result_parser: ResultParser,
    #[serde(default = "default_per_test_timeout")]
    pub per_test_timeout_s: f64,
    #[serde(default = "default_whole_run_timeout")]
    pub whole_run_timeout_s: f64,
    /// Known test ids. Required for per-test mode; in suite mode tests listed
    /// here and not reported as failing are recorded as passing.
    #[serde(default)]
    pub tests: Vec<String>,
    /// Files (relative to `root`) to mutate.
    #[serde(default)]
    pub target_files: Vec<String>,
    /// Optional validator command; `{file}` is replaced by the patched file.
    #[serde(default)]
    pub validator: Option<String>,
}

impl ProjectConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.per_test_timeout_s > 0.0 && self.whole_run_timeout_s > 0.0) {
            return Err(HarnessError::Config("timeouts must be positive".into()));
        }
        if let ResultParser::Regex(p) = &self.result_parser {
            let re = Regex::new(p).map_err(|e| HarnessError::Config(e.to_string()))?;
            if re.captures_len() != 2 {
                return Err(HarnessError::Config(format!(
                    "result regex must have exactly one capture group, found {}",
                    re.captures_len() - 1
                )));
            }
        }
        if self.per_test_mode() && self.tests.is_empty() {
            return Err(HarnessError::Config(
                "a `{test}` command needs the `tests` list".into(),
            ));
        }
        Ok(())
    }

    pub fn per_test_mode(&self) -> bool {
        self.test_command.contains("{test}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestStatus {
    Pass,
    Fail,
    Timeout,
    Error,
}

impl TestStatus {
    pub fn is_failing(self) -> bool {
        self != TestStatus::Pass
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRun {
    pub outcomes: BTreeMap<String, TestStatus>,
    /// `-1` when the process was killed or could not report a code.
    pub exit_code: i32,
    pub wall_time_s: f64,
    #[serde(default)]
    pub timed_out: bool,
    #[serde(default)]
    pub parser_failure: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FailSet(pub BTreeSet<String>);

impl FailSet {
    pub fn new<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        FailSet(ids.into_iter().map(Into::into).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn intersection_len(&self, other: &FailSet) -> usize {
        self.0.intersection(&other.0).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = &String> {
        self.0.iter()
    }
}

/// Tests whose outcome is fail, timeout or error.
pub fn failset(run: &TestRun) -> FailSet {
    FailSet(
        run.outcomes
            .iter()
            .filter(|(_, s)| s.is_failing())
            .map(|(t, _)| t.clone())
            .collect(),
    )
}

/// Copy `root` into `dest`, skipping VCS metadata.
pub fn clone_project(root: &Path, dest: &Path) -> Result<(), HarnessError> {
    let walker = WalkDir::new(root)
        .into_iter()
        .filter_entry(|e| !VCS_DIRS.iter().any(|v| e.file_name() == *v));
    for entry in walker {
        let entry = entry.map_err(|e| HarnessError::Io {
            path: root.to_path_buf(),
            source: e.into(),
        })?;
        let rel = entry.path().strip_prefix(root).expect("walkdir yields children of root");
        let target = dest.join(rel);
        if entry.file_type().is_dir() {
            fs::create_dir_all(&target).map_err(io_err(&target))?;
        } else if entry.file_type().is_file() {
            // fs::copy carries permission bits, so scripts stay executable.
            fs::copy(entry.path(), &target).map_err(io_err(&target))?;
        }
    }
    Ok(())
}

fn splice(
    workspace: &Path,
    file: &str,
    start: usize,
    expected: &str,
    replacement: &str,
) -> Result<PathBuf, HarnessError> {
    let path = workspace.join(file);
    if !path.is_file() {
        return Err(HarnessError::FileMissing(path));
    }
    let content = fs::read_to_string(&path).map_err(io_err(&path))?;
    let end = start + expected.len();
    if content.get(start..end) != Some(expected) {
        return Err(HarnessError::CloneDirty(path));
    }
    let patched = format!("{}{}{}", &content[..start], replacement, &content[end..]);
    fs::write(&path, patched).map_err(io_err(&path))?;
    Ok(path)
}

/// Patch the mutated file inside a clean workspace clone.
pub fn apply_mutant(workspace: &Path, m: &ManifestEntry) -> Result<PathBuf, HarnessError> {
    if m.span[1] - m.span[0] != m.original.len() {
        return Err(HarnessError::CloneDirty(workspace.join(&m.file)));
    }
    splice(workspace, &m.file, m.span[0], &m.original, &m.replacement)
}

/// Undo [`apply_mutant`].
pub fn revert_mutant(workspace: &Path, m: &ManifestEntry) -> Result<PathBuf, HarnessError> {
    splice(workspace, &m.file, m.span[0], &m.replacement, &m.original)
}

struct ProcessOutcome {
    exit_code: i32,
    timed_out: bool,
    output: String,
}

fn run_command(cmd: &str, cwd: &Path, timeout: Duration) -> Result<ProcessOutcome, HarnessError> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(cmd)
        .current_dir(cwd)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0)
        .spawn()
        .map_err(io_err(cwd))?;
    let pipe_reader = |mut r: Box<dyn Read + Send>| {
        thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = r.read_to_end(&mut buf);
            buf
        })
    };
    let out = pipe_reader(Box::new(child.stdout.take().expect("stdout piped")));
    let err = pipe_reader(Box::new(child.stderr.take().expect("stderr piped")));
    let deadline = Instant::now() + timeout;
    let mut timed_out = false;
    let status = loop {
        if let Some(status) = child.try_wait().map_err(io_err(cwd))? {
            break Some(status);
        }
        if Instant::now() >= deadline {
            timed_out = true;
            // SAFETY: kill(2) on the child's process group; no memory is touched.
            unsafe {
                libc::kill(-(child.id() as i32), libc::SIGKILL);
            }
            let _ = child.wait();
            break None;
        }
        thread::sleep(Duration::from_millis(5));
    };
    let mut output = String::from_utf8_lossy(&out.join().unwrap_or_default()).into_owned();
    output.push_str(&String::from_utf8_lossy(&err.join().unwrap_or_default()));
    Ok(ProcessOutcome {
        exit_code: status.and_then(|s| s.code()).unwrap_or(-1),
        timed_out,
        output,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct JunitCase {
    status: TestStatus,
    seconds: Option<f64>,
}

/// Parse one JUnit XML document into `id -> outcome`. Skipped tests are left
/// out. The id is `classname.name`, or `name` without a classname.
pub fn parse_junit(xml: &str) -> Result<BTreeMap<String, (TestStatus, Option<f64>)>, String> {
    let mut reader = quick_xml::Reader::from_str(xml);
    let mut out = BTreeMap::new();
    let mut current: Option<(String, JunitCase, bool)> = None;
    let attr = |e: &quick_xml::events::BytesStart<'_>, key: &[u8]| -> Result<Option<String>, String> {
        for a in e.attributes() {
            let a = a.map_err(|e| e.to_string())?;
            if a.key.as_ref() == key {
                return Ok(Some(a.unescape_value().map_err(|e| e.to_string())?.into_owned()));
            }
        }
        Ok(None)
    };
    loop {
        let event = reader.read_event().map_err(|e| e.to_string())?;
        let (start, empty) = match &event {
            Event::Start(e) => (Some(e.clone()), false),
            Event::Empty(e) => (Some(e.clone()), true),
            _ => (None, false),
        };
        if let Some(e) = start {
            match e.name().as_ref() {
                b"testcase" => {
                    let name = attr(&e, b"name")?.ok_or("testcase without name")?;
                    let id = match attr(&e, b"classname")? {
                        Some(c) if !c.is_empty() => format!("{c}.{name}"),
                        _ => name,
                    };
                    let seconds = attr(&e, b"time")?.and_then(|t| t.trim().parse().ok());
                    let case = JunitCase {
                        status: TestStatus::Pass,
                        seconds,
                    };
                    if empty {
                        out.insert(id, (case.status, case.seconds));
                    } else {
                        current = Some((id, case, false));
                    }
                }
                b"failure" => {
                    if let Some((_, c, _)) = current.as_mut() {
                        if c.status == TestStatus::Pass {
                            c.status = TestStatus::Fail;
                        }
                    }
                }
                b"error" => {
                    if let Some((_, c, _)) = current.as_mut() {
                        c.status = TestStatus::Error;
                    }
                }
                b"skipped" => {
                    if let Some((_, _, skipped)) = current.as_mut() {
                        *skipped = true;
                    }
                }
                _ => {}
            }
            continue;
        }
        match event {
            Event::End(e) if e.name().as_ref() == b"testcase" => {
                if let Some((id, case, skipped)) = current.take() {
                    if !skipped {
                        out.insert(id, (case.status, case.seconds));
                    }
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(out)
}

fn junit_reports(workspace: &Path, rel: &str) -> Result<Vec<PathBuf>, HarnessError> {
    let base = workspace.join(rel);
    if base.is_file() {
        return Ok(vec![base]);
    }
    if !base.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = WalkDir::new(&base)
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file() && e.path().extension().is_some_and(|x| x == "xml"))
        .map(|e| e.into_path())
        .collect();
    files.sort();
    Ok(files)
}

fn suite_outcomes(
    workspace: &Path,
    cfg: &ProjectConfig,
    proc_: &ProcessOutcome,
) -> Result<(BTreeMap<String, TestStatus>, bool), HarnessError> {
    let mut outcomes = BTreeMap::new();
    let mut reported = BTreeSet::new();
    match &cfg.result_parser {
        ResultParser::Regex(pattern) => {
            let re = Regex::new(pattern).map_err(|e| HarnessError::Config(e.to_string()))?;
            for line in proc_.output.lines() {
                if let Some(id) = re.captures(line).and_then(|c| c.get(1)) {
                    outcomes.insert(id.as_str().to_string(), TestStatus::Fail);
                    reported.insert(id.as_str().to_string());
                }
            }
            for t in &cfg.tests {
                outcomes.entry(t.clone()).or_insert(if proc_.timed_out {
                    TestStatus::Timeout
                } else {
                    TestStatus::Pass
                });
            }
        }
        ResultParser::JunitXml(rel) => {
            for path in junit_reports(workspace, rel)? {
                let xml = fs::read_to_string(&path).map_err(io_err(&path))?;
                let cases = parse_junit(&xml).map_err(|message| HarnessError::Junit {
                    path: path.clone(),
                    message,
                })?;
                for (id, (status, seconds)) in cases {
                    let status = match seconds {
                        Some(s) if s > cfg.per_test_timeout_s => TestStatus::Timeout,
                        _ => status,
                    };
                    reported.insert(id.clone());
                    outcomes.insert(id, status);
                }
            }
            for t in &cfg.tests {
                outcomes.entry(t.clone()).or_insert(if proc_.timed_out {
                    TestStatus::Timeout
                } else {
                    TestStatus::Error
                });
            }
        }
    }
    let parser_failure = reported.is_empty() && proc_.exit_code != 0 && !proc_.timed_out;
    if parser_failure {
        for status in outcomes.values_mut() {
            *status = TestStatus::Error;
        }
        if outcomes.is_empty() {
            outcomes.insert(RUN_TEST_ID.to_string(), TestStatus::Error);
        }
    }
    if proc_.timed_out && outcomes.is_empty() {
        outcomes.insert(RUN_TEST_ID.to_string(), TestStatus::Timeout);
    }
    Ok((outcomes, parser_failure))
}

/// Run the project's tests inside `workspace`.
pub fn run_tests(workspace: &Path, cfg: &ProjectConfig) -> Result<TestRun, HarnessError> {
    cfg.validate()?;
    let started = Instant::now();
    let whole = Duration::from_secs_f64(cfg.whole_run_timeout_s);
    if cfg.per_test_mode() {
        let per_test = Duration::from_secs_f64(cfg.per_test_timeout_s);
        let mut outcomes = BTreeMap::new();
        let mut exit_code = 0;
        let mut timed_out = false;
        for t in &cfg.tests {
            let remaining = whole.saturating_sub(started.elapsed());
            if remaining.is_zero() {
                timed_out = true;
                outcomes.insert(t.clone(), TestStatus::Timeout);
                continue;
            }
            let p = run_command(&cfg.test_command.replace("{test}", t), workspace, per_test.min(remaining))?;
            let status = if p.timed_out {
                TestStatus::Timeout
            } else if p.exit_code == 0 {
                TestStatus::Pass
            } else {
                TestStatus::Fail
            };
            if status != TestStatus::Pass && exit_code == 0 {
                exit_code = if p.timed_out { -1 } else { p.exit_code };
            }
            timed_out |= p.timed_out;
            outcomes.insert(t.clone(), status);
        }
        return Ok(TestRun {
            outcomes,
            exit_code,
            wall_time_s: started.elapsed().as_secs_f64(),
            timed_out,
            parser_failure: false,
        });
    }
    let p = run_command(&cfg.test_command, workspace, whole)?;
    let (outcomes, parser_failure) = suite_outcomes(workspace, cfg, &p)?;
    if parser_failure {
        log::warn!(
            "no test ids extracted from a failing run (exit {}) in {}",
            p.exit_code,
            workspace.display()
        );
    }
    Ok(TestRun {
        outcomes,
        exit_code: p.exit_code,
        wall_time_s: started.elapsed().as_secs_f64(),
        timed_out: p.timed_out,
        parser_failure,
    })
}

/// One line of the results manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutantResult {
    pub mutant_id: String,
    pub fail_tests: Vec<String>,
    pub statuses: BTreeMap<String, TestStatus>,
    pub wall_time_s: f64,
    pub exit_code: i32,
}

impl MutantResult {
    pub fn from_run(mutant_id: &str, run: &TestRun) -> Self {
        MutantResult {
            mutant_id: mutant_id.to_string(),
            fail_tests: failset(run).0.into_iter().collect(),
            statuses: run.outcomes.clone(),
            wall_time_s: run.wall_time_s,
            exit_code: run.exit_code,
        }
    }

    pub fn failset(&self) -> FailSet {
        FailSet::new(self.fail_tests.iter().cloned())
    }
}

/// A mutant that could not be executed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkippedMutant {
    pub mutant_id: String,
    pub error: String,
}

fn run_one(cfg: &ProjectConfig, m: &ManifestEntry) -> Result<MutantResult, HarnessError> {
    let dir = tempfile::Builder::new()
        .prefix("mimicry-ws-")
        .tempdir()
        .map_err(io_err(&cfg.root))?;
    let ws = dir.path().join("project");
    clone_project(&cfg.root, &ws)?;
    apply_mutant(&ws, m)?;
    let run = run_tests(&ws, cfg)?;
    Ok(MutantResult::from_run(&m.id, &run))
}

/// Run the clean project once, in its own clone.
pub fn run_baseline(cfg: &ProjectConfig) -> Result<TestRun, HarnessError> {
    let dir = tempfile::Builder::new()
        .prefix("mimicry-ws-")
        .tempdir()
        .map_err(io_err(&cfg.root))?;
    let ws = dir.path().join("project");
    clone_project(&cfg.root, &ws)?;
    run_tests(&ws, cfg)
}

/// Execute every mutant in its own workspace clone. Results are sorted by
/// mutant id.
pub fn run_mutants(
    cfg: &ProjectConfig,
    mutants: &[ManifestEntry],
    exec: Execution,
) -> (Vec<MutantResult>, Vec<SkippedMutant>) {
    let outcomes = exec.map(mutants, |m| (m.id.clone(), run_one(cfg, m)));
    let mut results = Vec::new();
    let mut skipped = Vec::new();
    for (id, r) in outcomes {
        match r {
            Ok(r) => results.push(r),
            Err(e) => {
                log::warn!("mutant {id} skipped: {e}");
                skipped.push(SkippedMutant {
                    mutant_id: id,
                    error: e.to_string(),
                });
            }
        }
    }
    results.sort_by(|a, b| a.mutant_id.cmp(&b.mutant_id));
    skipped.sort_by(|a, b| a.mutant_id.cmp(&b.mutant_id));
    (results, skipped)
}
