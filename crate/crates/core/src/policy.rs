//! Access-control policy language and three-phase authorization.
//!
//! Two statement forms, joined by the usual boolean connectives with AND
//! binding tighter than OR and parentheses allowed:
//!
//! ```text
//! GRANT access TO capability:document_processing
//!     IF agent.trust_score > 0.8
//!     AND agent.has_credential("data_processing_certified")
//!     AND current_time WITHIN agent.authorized_hours
//!     AND request.data_classification <= agent.clearance_level
//!
//! IF speaker = "external_user" AND tool_call = "schedule_meeting()"
//!     THEN require_2FA = TRUE
//! ```
//!
//! Statements may carry an optional `RULE <id> [PRIORITY <n>]:` prefix;
//! ids default to `rule<k>` and priority to 0. `#` starts a comment.
//!
//! Authorization runs in three phases: identity verification, credential
//! resolution against presented credentials, then rule evaluation. The
//! highest-priority matching rule decides; obligation rules matching
//! alongside (or alone) yield a grant carrying its obligations; no match is
//! a deny. Two distinct grant rules tied at the top priority are a conflict
//! and deny.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{self, CanonicalBytes, KeyPair};
use crate::identity::{
    issue_credential, verify_credential, CredentialStatus, Did, IdentityError, VerifiableCredential,
};
use crate::Tick;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("duplicate rule id `{0}`")]
    DuplicateRuleId(String),
    #[error("rule `{0}` signature does not verify against the administrator key")]
    BadRuleSignature(String),
    #[error("jit credential duration must be at least 1 tick")]
    NonPositiveDuration,
    #[error(transparent)]
    Identity(#[from] IdentityError),
}

// ---------------------------------------------------------------------------
// AST
// ---------------------------------------------------------------------------

/// Attributes the schema knows about. Unknown names are a parse-time error.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attr {
    AgentTrustScore,
    AgentClearanceLevel,
    RequestDataClassification,
    CurrentTime,
    Speaker,
    ToolCall,
}

impl Attr {
    fn lookup(name: &str) -> Option<Attr> {
        match name {
            "agent.trust_score" => Some(Attr::AgentTrustScore),
            "agent.clearance_level" => Some(Attr::AgentClearanceLevel),
            "request.data_classification" => Some(Attr::RequestDataClassification),
            "current_time" => Some(Attr::CurrentTime),
            "speaker" => Some(Attr::Speaker),
            "tool_call" => Some(Attr::ToolCall),
            _ => None,
        }
    }

    fn is_textual(self) -> bool {
        matches!(self, Attr::Speaker | Attr::ToolCall)
    }

    fn render(self) -> &'static str {
        match self {
            Attr::AgentTrustScore => "agent.trust_score",
            Attr::AgentClearanceLevel => "agent.clearance_level",
            Attr::RequestDataClassification => "request.data_classification",
            Attr::CurrentTime => "current_time",
            Attr::Speaker => "speaker",
            Attr::ToolCall => "tool_call",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operand {
    Attr(Attr),
    Number(f64),
    Text(String),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Attr(a) => f.write_str(a.render()),
            Operand::Number(n) => write!(f, "{n}"),
            Operand::Text(s) => write!(f, "\"{s}\""),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
}

impl CmpOp {
    fn render(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "=",
        }
    }
}

/// Boolean expression over the fixed attribute schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expr {
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Cmp { lhs: Operand, op: CmpOp, rhs: Operand },
    HasCredential(String),
    /// `current_time WITHIN agent.authorized_hours`
    WithinAuthorizedHours,
}

/// What a matched rule does.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    Grant { capability: String },
    Require { obligation: String },
}

/// A parsed, signable policy rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyRule {
    pub id: String,
    pub effect: Effect,
    pub condition: Expr,
    pub priority: i64,
    /// Original statement text, normalized to single spacing.
    pub source: String,
    pub signature: Vec<u8>,
}

impl PolicyRule {
    pub fn signing_bytes(&self) -> Vec<u8> {
        CanonicalBytes::new("policy-rule")
            .text(&self.id)
            .i64(self.priority)
            .text(&self.source)
            .finish()
    }
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Text(String),
    LParen,
    RParen,
    Colon,
    Cmp(CmpOp),
}

#[derive(Clone, Debug)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

struct Lexer<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    line: usize,
    column: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Self { src, bytes: src.as_bytes(), pos: 0, line: 1, column: 1 }
    }

    fn error(&self, message: impl Into<String>) -> PolicyError {
        PolicyError::Parse { line: self.line, column: self.column, message: message.into() }
    }

    fn bump(&mut self) -> Option<u8> {
        let b = *self.bytes.get(self.pos)?;
        self.pos += 1;
        if b == b'\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(b)
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn tokens(mut self) -> Result<Vec<Spanned>, PolicyError> {
        let mut out = Vec::new();
        loop {
            // Skip whitespace and # comments.
            loop {
                match self.peek() {
                    Some(b) if (b as char).is_whitespace() => {
                        self.bump();
                    }
                    Some(b'#') => {
                        while let Some(b) = self.peek() {
                            if b == b'\n' {
                                break;
                            }
                            self.bump();
                        }
                    }
                    _ => break,
                }
            }
            let (line, column) = (self.line, self.column);
            let Some(b) = self.peek() else { break };
            let tok = match b {
                b'(' => {
                    self.bump();
                    Tok::LParen
                }
                b')' => {
                    self.bump();
                    Tok::RParen
                }
                b':' => {
                    self.bump();
                    Tok::Colon
                }
                b'<' | b'>' => {
                    self.bump();
                    if self.peek() == Some(b'=') {
                        self.bump();
                        Tok::Cmp(if b == b'<' { CmpOp::Le } else { CmpOp::Ge })
                    } else {
                        Tok::Cmp(if b == b'<' { CmpOp::Lt } else { CmpOp::Gt })
                    }
                }
                b'=' => {
                    self.bump();
                    if self.peek() == Some(b'=') {
                        self.bump();
                    }
                    Tok::Cmp(CmpOp::Eq)
                }
                b'"' => {
                    self.bump();
                    let start = self.pos;
                    loop {
                        match self.peek() {
                            Some(b'"') => break,
                            Some(b'\n') | None => return Err(self.error("unterminated string literal")),
                            _ => {
                                self.bump();
                            }
                        }
                    }
                    let text = self.src[start..self.pos].to_string();
                    self.bump(); // closing quote
                    Tok::Text(text)
                }
                b'0'..=b'9' => {
                    let start = self.pos;
                    while self
                        .peek()
                        .is_some_and(|b| b.is_ascii_digit() || b == b'.')
                    {
                        // A dot is part of the number only when followed by a digit;
                        // otherwise it terminates (e.g. in versioned idents this
                        // lexer never sees).
                        if self.peek() == Some(b'.')
                            && !self.bytes.get(self.pos + 1).copied().is_some_and(|n| n.is_ascii_digit())
                        {
                            break;
                        }
                        self.bump();
                    }
                    let text = &self.src[start..self.pos];
                    let value: f64 = text
                        .parse()
                        .map_err(|_| self.error(format!("malformed number `{text}`")))?;
                    Tok::Number(value)
                }
                b if (b as char).is_ascii_alphabetic() || b == b'_' => {
                    let start = self.pos;
                    while self.peek().is_some_and(|b| {
                        (b as char).is_ascii_alphanumeric() || b == b'_'
                    }) {
                        self.bump();
                    }
                    // Dotted attribute paths lex as one identifier.
                    while self.peek() == Some(b'.')
                        && self
                            .bytes
                            .get(self.pos + 1)
                            .is_some_and(|&n| (n as char).is_ascii_alphabetic() || n == b'_')
                    {
                        self.bump();
                        while self.peek().is_some_and(|b| {
                            (b as char).is_ascii_alphanumeric() || b == b'_'
                        }) {
                            self.bump();
                        }
                    }
                    Tok::Ident(self.src[start..self.pos].to_string())
                }
                other => {
                    return Err(self.error(format!("unexpected character `{}`", other as char)));
                }
            };
            out.push(Spanned { tok, line, column });
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct Parser {
    tokens: Vec<Spanned>,
    pos: usize,
    end_line: usize,
    end_column: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|s| &s.tok)
    }

    fn here(&self) -> (usize, usize) {
        self.tokens
            .get(self.pos)
            .map(|s| (s.line, s.column))
            .unwrap_or((self.end_line, self.end_column))
    }

    fn error(&self, message: impl Into<String>) -> PolicyError {
        let (line, column) = self.here();
        PolicyError::Parse { line, column, message: message.into() }
    }

    fn bump(&mut self) -> Option<&Spanned> {
        let s = self.tokens.get(self.pos);
        if s.is_some() {
            self.pos += 1;
        }
        s
    }

    fn expect_ident(&mut self, word: &str) -> Result<(), PolicyError> {
        match self.peek() {
            Some(Tok::Ident(w)) if w == word => {
                self.bump();
                Ok(())
            }
            _ => Err(self.error(format!("expected `{word}`"))),
        }
    }

    fn eat_ident(&mut self, word: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Ident(w)) if w == word) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn statement(&mut self, index: usize) -> Result<(String, i64, Effect, Expr), PolicyError> {
        // Optional `RULE <id> [PRIORITY <n>]:` prefix.
        let mut id = format!("rule{index}");
        let mut priority = 0i64;
        if self.eat_ident("RULE") {
            match self.bump().map(|s| s.tok.clone()) {
                Some(Tok::Ident(name)) => id = name,
                _ => return Err(self.error("expected rule id after `RULE`")),
            }
            if self.eat_ident("PRIORITY") {
                match self.bump().map(|s| s.tok.clone()) {
                    Some(Tok::Number(n)) if n.fract() == 0.0 => priority = n as i64,
                    _ => return Err(self.error("expected integer after `PRIORITY`")),
                }
            }
            if !matches!(self.peek(), Some(Tok::Colon)) {
                return Err(self.error("expected `:` after rule header"));
            }
            self.bump();
        }

        if self.eat_ident("GRANT") {
            self.expect_ident("access")?;
            self.expect_ident("TO")?;
            self.expect_ident("capability")?;
            if !matches!(self.peek(), Some(Tok::Colon)) {
                return Err(self.error("expected `:` after `capability`"));
            }
            self.bump();
            let capability = match self.bump().map(|s| s.tok.clone()) {
                Some(Tok::Ident(name)) => name,
                _ => return Err(self.error("expected capability name")),
            };
            self.expect_ident("IF")?;
            let condition = self.expr()?;
            Ok((id, priority, Effect::Grant { capability }, condition))
        } else if self.eat_ident("IF") {
            let condition = self.expr()?;
            self.expect_ident("THEN")?;
            let obligation_ident = match self.bump().map(|s| s.tok.clone()) {
                Some(Tok::Ident(name)) => name,
                _ => return Err(self.error("expected obligation name after `THEN`")),
            };
            match self.peek() {
                Some(Tok::Cmp(CmpOp::Eq)) => {
                    self.bump();
                }
                _ => return Err(self.error("expected `=` in obligation clause")),
            }
            self.expect_ident("TRUE")?;
            let obligation = obligation_ident
                .strip_prefix("require_")
                .unwrap_or(&obligation_ident)
                .to_string();
            Ok((id, priority, Effect::Require { obligation }, condition))
        } else {
            Err(self.error("expected `GRANT` or `IF` to start a rule"))
        }
    }

    fn expr(&mut self) -> Result<Expr, PolicyError> {
        let mut lhs = self.and_expr()?;
        while self.eat_ident("OR") {
            let rhs = self.and_expr()?;
            lhs = Expr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, PolicyError> {
        let mut lhs = self.atom()?;
        while self.eat_ident("AND") {
            let rhs = self.atom()?;
            lhs = Expr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn atom(&mut self) -> Result<Expr, PolicyError> {
        if matches!(self.peek(), Some(Tok::LParen)) {
            self.bump();
            let inner = self.expr()?;
            if !matches!(self.peek(), Some(Tok::RParen)) {
                return Err(self.error("expected `)`"));
            }
            self.bump();
            return Ok(inner);
        }
        // agent.has_credential("name")
        if matches!(self.peek(), Some(Tok::Ident(w)) if w == "agent.has_credential") {
            self.bump();
            if !matches!(self.peek(), Some(Tok::LParen)) {
                return Err(self.error("expected `(` after has_credential"));
            }
            self.bump();
            let name = match self.bump().map(|s| s.tok.clone()) {
                Some(Tok::Text(name)) => name,
                _ => return Err(self.error("expected quoted credential name")),
            };
            if !matches!(self.peek(), Some(Tok::RParen)) {
                return Err(self.error("expected `)` after credential name"));
            }
            self.bump();
            return Ok(Expr::HasCredential(name));
        }
        // current_time WITHIN agent.authorized_hours
        if matches!(self.peek(), Some(Tok::Ident(w)) if w == "current_time") {
            // Distinguish WITHIN from a plain comparison on current_time.
            if matches!(self.tokens.get(self.pos + 1).map(|s| &s.tok),
                        Some(Tok::Ident(w)) if w == "WITHIN")
            {
                self.bump();
                self.bump();
                match self.bump().map(|s| s.tok.clone()) {
                    Some(Tok::Ident(target)) if target == "agent.authorized_hours" => {
                        return Ok(Expr::WithinAuthorizedHours);
                    }
                    _ => return Err(self.error("WITHIN expects agent.authorized_hours")),
                }
            }
        }
        // Comparison: operand op operand
        let lhs = self.operand()?;
        let op = match self.peek() {
            Some(Tok::Cmp(op)) => *op,
            _ => return Err(self.error("expected comparison operator")),
        };
        self.bump();
        let rhs = self.operand()?;
        self.check_types(&lhs, op, &rhs)?;
        Ok(Expr::Cmp { lhs, op, rhs })
    }

    fn operand(&mut self) -> Result<Operand, PolicyError> {
        let err_pos = self.here();
        match self.bump().map(|s| s.tok.clone()) {
            Some(Tok::Number(n)) => Ok(Operand::Number(n)),
            Some(Tok::Text(s)) => Ok(Operand::Text(s)),
            Some(Tok::Ident(name)) => match Attr::lookup(&name) {
                Some(attr) => Ok(Operand::Attr(attr)),
                None => Err(PolicyError::Parse {
                    line: err_pos.0,
                    column: err_pos.1,
                    message: format!("unknown attribute `{name}`"),
                }),
            },
            _ => Err(PolicyError::Parse {
                line: err_pos.0,
                column: err_pos.1,
                message: "expected attribute, number, or string".into(),
            }),
        }
    }

    fn check_types(&self, lhs: &Operand, op: CmpOp, rhs: &Operand) -> Result<(), PolicyError> {
        let textual = |o: &Operand| match o {
            Operand::Attr(a) => a.is_textual(),
            Operand::Text(_) => true,
            Operand::Number(_) => false,
        };
        if textual(lhs) != textual(rhs) {
            return Err(self.error("comparison mixes text and numeric operands"));
        }
        if textual(lhs) && op != CmpOp::Eq {
            return Err(self.error("text operands only support `=`"));
        }
        Ok(())
    }
}

/// Source text of one parsed statement, single-spaced, for signing and
/// traceability.
fn render_statement(id: &str, priority: i64, effect: &Effect, condition: &Expr) -> String {
    let head = match effect {
        Effect::Grant { capability } => format!("GRANT access TO capability:{capability} IF "),
        Effect::Require { .. } => "IF ".to_string(),
    };
    let tail = match effect {
        Effect::Grant { .. } => String::new(),
        Effect::Require { obligation } => format!(" THEN require_{obligation} = TRUE"),
    };
    format!("RULE {id} PRIORITY {priority}: {head}{}{tail}", render_expr(condition))
}

fn render_expr(e: &Expr) -> String {
    match e {
        Expr::And(a, b) => format!("{} AND {}", render_expr(a), render_expr(b)),
        Expr::Or(a, b) => format!("({}) OR ({})", render_expr(a), render_expr(b)),
        Expr::Cmp { lhs, op, rhs } => format!("{lhs} {} {rhs}", op.render()),
        Expr::HasCredential(name) => format!("agent.has_credential(\"{name}\")"),
        Expr::WithinAuthorizedHours => "current_time WITHIN agent.authorized_hours".into(),
    }
}

/// Parse policy text into unsigned rules. Statement boundaries are inferred:
/// a new statement starts at `GRANT`, at `RULE`, or at an `IF` that is not
/// consumed inside a grant clause.
pub fn parse_policy(text: &str) -> Result<Vec<PolicyRule>, PolicyError> {
    let tokens = Lexer::new(text).tokens()?;
    let (end_line, end_column) = tokens
        .last()
        .map(|s| (s.line, s.column + 1))
        .unwrap_or((1, 1));
    let mut parser = Parser { tokens, pos: 0, end_line, end_column };
    let mut rules = Vec::new();
    let mut seen_ids = BTreeSet::new();
    let mut index = 1;
    while parser.peek().is_some() {
        let (id, priority, effect, condition) = parser.statement(index)?;
        if !seen_ids.insert(id.clone()) {
            return Err(PolicyError::DuplicateRuleId(id));
        }
        let source = render_statement(&id, priority, &effect, &condition);
        rules.push(PolicyRule { id, effect, condition, priority, source, signature: Vec::new() });
        index += 1;
    }
    Ok(rules)
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// An access request plus its typed context attributes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AccessRequest {
    pub subject: Did,
    pub capability: String,
    pub tool_call: Option<String>,
    pub speaker: String,
    pub data_classification: i64,
    pub clearance_level: i64,
    pub now: Tick,
    pub authorized_hours: Option<(Tick, Tick)>,
    pub presented_credentials: Vec<VerifiableCredential>,
}

/// Verification context for credential claims referenced by conditions.
pub struct AuthEnv<'a> {
    pub issuer_keys: &'a BTreeMap<Did, Vec<u8>>,
    pub revoked_credentials: &'a BTreeSet<String>,
    /// Ticks per day for `current_time WITHIN` checks.
    pub day_length: Tick,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Grant,
    GrantWithObligations(Vec<String>),
    Deny,
}

/// One evaluated atomic condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceItem {
    pub condition: String,
    pub value: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccessDecision {
    pub outcome: Outcome,
    pub matched_rule: Option<String>,
    pub evaluation_trace: Vec<TraceItem>,
    /// Phase annotations: identity check result, credential resolution,
    /// rule conflicts.
    pub notes: Vec<String>,
}

fn attr_number(attr: Attr, request: &AccessRequest, env: &AuthEnv) -> f64 {
    match attr {
        Attr::AgentTrustScore => f64::NAN, // substituted by the caller-provided trust
        Attr::AgentClearanceLevel => request.clearance_level as f64,
        Attr::RequestDataClassification => request.data_classification as f64,
        Attr::CurrentTime => (request.now % env.day_length) as f64,
        Attr::Speaker | Attr::ToolCall => f64::NAN,
    }
}

fn attr_text(attr: Attr, request: &AccessRequest) -> Option<String> {
    match attr {
        Attr::Speaker => Some(request.speaker.clone()),
        Attr::ToolCall => request.tool_call.clone(),
        _ => None,
    }
}

struct Evaluator<'a> {
    request: &'a AccessRequest,
    trust: f64,
    env: &'a AuthEnv<'a>,
    /// Resolved credential claims: name -> accepted.
    credential_claims: BTreeMap<String, bool>,
    trace: Vec<TraceItem>,
}

impl Evaluator<'_> {
    fn number(&self, operand: &Operand) -> f64 {
        match operand {
            Operand::Number(n) => *n,
            Operand::Attr(Attr::AgentTrustScore) => self.trust,
            Operand::Attr(a) => attr_number(*a, self.request, self.env),
            Operand::Text(_) => f64::NAN,
        }
    }

    fn text(&self, operand: &Operand) -> Option<String> {
        match operand {
            Operand::Text(s) => Some(s.clone()),
            Operand::Attr(a) => attr_text(*a, self.request),
            Operand::Number(_) => None,
        }
    }

    fn eval(&mut self, expr: &Expr) -> bool {
        match expr {
            Expr::And(a, b) => {
                // Evaluate both sides so the trace is complete.
                let va = self.eval(a);
                let vb = self.eval(b);
                va && vb
            }
            Expr::Or(a, b) => {
                let va = self.eval(a);
                let vb = self.eval(b);
                va || vb
            }
            Expr::Cmp { lhs, op, rhs } => {
                let textual = matches!(lhs, Operand::Text(_))
                    || matches!(lhs, Operand::Attr(a) if a.is_textual());
                let value = if textual {
                    match (self.text(lhs), self.text(rhs)) {
                        (Some(l), Some(r)) => l == r,
                        _ => false,
                    }
                } else {
                    let l = self.number(lhs);
                    let r = self.number(rhs);
                    match op {
                        CmpOp::Lt => l < r,
                        CmpOp::Le => l <= r,
                        CmpOp::Gt => l > r,
                        CmpOp::Ge => l >= r,
                        CmpOp::Eq => l == r,
                    }
                };
                self.trace.push(TraceItem {
                    condition: format!("{lhs} {} {rhs}", op.render()),
                    value,
                });
                value
            }
            Expr::HasCredential(name) => {
                let value = self.credential_claims.get(name).copied().unwrap_or(false);
                self.trace.push(TraceItem {
                    condition: format!("agent.has_credential(\"{name}\")"),
                    value,
                });
                value
            }
            Expr::WithinAuthorizedHours => {
                let value = match self.request.authorized_hours {
                    None => false,
                    Some((start, end)) => {
                        let tod = self.request.now % self.env.day_length;
                        if start <= end {
                            tod >= start && tod <= end
                        } else {
                            // Interval wraps midnight.
                            tod >= start || tod <= end
                        }
                    }
                };
                self.trace.push(TraceItem {
                    condition: "current_time WITHIN agent.authorized_hours".into(),
                    value,
                });
                value
            }
        }
    }
}

fn credential_names(expr: &Expr, out: &mut BTreeSet<String>) {
    match expr {
        Expr::And(a, b) | Expr::Or(a, b) => {
            credential_names(a, out);
            credential_names(b, out);
        }
        Expr::HasCredential(name) => {
            out.insert(name.clone());
        }
        _ => {}
    }
}

/// Three-phase authorization over a loaded rule set. Deny-by-default.
pub fn authorize(
    rules: &[PolicyRule],
    request: &AccessRequest,
    trust: f64,
    identity_verified: bool,
    env: &AuthEnv,
) -> AccessDecision {
    let mut notes = Vec::new();

    // Phase 1: identity verification.
    if !identity_verified {
        return AccessDecision {
            outcome: Outcome::Deny,
            matched_rule: None,
            evaluation_trace: Vec::new(),
            notes: vec!["phase1: identity verification failed".into()],
        };
    }
    notes.push("phase1: identity verified".into());

    // Phase 2: resolve every credential claim any rule references.
    let mut referenced = BTreeSet::new();
    for rule in rules {
        credential_names(&rule.condition, &mut referenced);
    }
    let mut credential_claims = BTreeMap::new();
    for name in referenced {
        let accepted = request.presented_credentials.iter().any(|vc| {
            vc.attests(&name)
                && vc.subject == request.subject
                && env.issuer_keys.get(&vc.issuer).is_some_and(|pk| {
                    verify_credential(vc, pk, request.now, env.revoked_credentials)
                        == CredentialStatus::Accept
                })
        });
        notes.push(format!(
            "phase2: credential \"{name}\" {}",
            if accepted { "accepted" } else { "not accepted" }
        ));
        credential_claims.insert(name, accepted);
    }

    // Phase 3: evaluate rules, highest priority first.
    let mut evaluator = Evaluator { request, trust, env, credential_claims, trace: Vec::new() };
    let mut matching_grants: Vec<&PolicyRule> = Vec::new();
    let mut obligations: Vec<(i64, String, String)> = Vec::new(); // (priority, rule id, obligation)
    for rule in rules {
        let applies = match &rule.effect {
            Effect::Grant { capability } => capability == &request.capability,
            Effect::Require { .. } => true,
        };
        if !applies {
            continue;
        }
        let matched = evaluator.eval(&rule.condition);
        if !matched {
            continue;
        }
        match &rule.effect {
            Effect::Grant { .. } => matching_grants.push(rule),
            Effect::Require { obligation } => {
                obligations.push((rule.priority, rule.id.clone(), obligation.clone()));
            }
        }
    }

    let trace = evaluator.trace;
    let obligation_list: Vec<String> = {
        let mut names: Vec<String> = obligations.iter().map(|(_, _, o)| o.clone()).collect();
        names.sort();
        names.dedup();
        names
    };

    if !matching_grants.is_empty() {
        matching_grants.sort_by(|a, b| b.priority.cmp(&a.priority).then(a.id.cmp(&b.id)));
        let top = matching_grants[0];
        let tied = matching_grants
            .iter()
            .filter(|r| r.priority == top.priority)
            .count();
        if tied > 1 {
            notes.push(format!(
                "phase3: {tied} grant rules tied at priority {}: conflict, deny",
                top.priority
            ));
            return AccessDecision {
                outcome: Outcome::Deny,
                matched_rule: None,
                evaluation_trace: trace,
                notes,
            };
        }
        let outcome = if obligation_list.is_empty() {
            Outcome::Grant
        } else {
            Outcome::GrantWithObligations(obligation_list)
        };
        return AccessDecision {
            outcome,
            matched_rule: Some(top.id.clone()),
            evaluation_trace: trace,
            notes,
        };
    }

    if !obligation_list.is_empty() {
        // An obligation rule matched on its own: grant gated on the
        // obligations, which the caller must discharge.
        let top = obligations
            .iter()
            .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)))
            .expect("non-empty");
        return AccessDecision {
            outcome: Outcome::GrantWithObligations(obligation_list.clone()),
            matched_rule: Some(top.1.clone()),
            evaluation_trace: trace,
            notes,
        };
    }

    notes.push("phase3: no rule matched: deny by default".into());
    AccessDecision {
        outcome: Outcome::Deny,
        matched_rule: None,
        evaluation_trace: trace,
        notes,
    }
}

/// A rule set signed by a security administrator.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicySet {
    pub rules: Vec<PolicyRule>,
    pub admin_public_key: Vec<u8>,
}

impl PolicySet {
    /// Parse, schema-check, and sign policy text with the administrator key.
    pub fn load(text: &str, admin_keys: &KeyPair) -> Result<Self, PolicyError> {
        let mut rules = parse_policy(text)?;
        for rule in &mut rules {
            rule.signature = crypto::sign(&admin_keys.private_key, &rule.signing_bytes());
        }
        Ok(Self { rules, admin_public_key: admin_keys.public_key.clone() })
    }

    /// Verify every rule's administrator signature.
    pub fn verify_signatures(&self) -> Result<(), PolicyError> {
        for rule in &self.rules {
            if !crypto::verify(&self.admin_public_key, &rule.signing_bytes(), &rule.signature) {
                return Err(PolicyError::BadRuleSignature(rule.id.clone()));
            }
        }
        Ok(())
    }
}

/// Issue a just-in-time credential valid for exactly
/// `[now, now + duration_ticks)`.
pub fn jit_credential(
    issuer_keys: &KeyPair,
    issuer: &Did,
    subject: &Did,
    capability: &str,
    duration_ticks: Tick,
    now: Tick,
) -> Result<VerifiableCredential, PolicyError> {
    if duration_ticks == 0 {
        return Err(PolicyError::NonPositiveDuration);
    }
    // Credential windows are inclusive, so the half-open JIT window
    // [now, now+duration) ends at not_after = now + duration - 1.
    let vc = issue_credential(
        issuer_keys,
        issuer,
        subject,
        [(capability.to_string(), "true".to_string()), ("jit".to_string(), "true".to_string())].into(),
        (now, now + duration_ticks - 1),
    )?;
    Ok(vc)
}
