//! Text export of context weights as direction-tagged edge lists.
//!
//! ```text
//! # ctxkernel context
//! grid 3 3
//! directions 4
//! radius 1
//! gamma 4.2000000000000000e-1
//! depth 3
//! variant layerwise
//! sharing layerwise
//! pooling sum
//! stacks 1
//! ctx layerwise 0 0 1 right 1.0000000000000000e0
//! ```
//!
//! Edge lines are `ctx <variant> <layer|shared> [class] <x> <x'> <dir> <weight>`;
//! the class field is present only for classwise contexts. Weights use 17
//! significant digits so a round trip is bit-exact. Only non-zero entries
//! are listed.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{ContextParams, ContextStack, Pooling, Sharing, Variant};
use crate::error::{Error, Result};
use crate::grid::{Direction, GridSpec, NeighborhoodSystem};

pub fn export_context(params: &ContextParams) -> String {
    let grid = params.support().grid();
    let variant = params.variant();
    let mut out = String::new();
    out.push_str("# ctxkernel context\n");
    let _ = writeln!(out, "grid {} {}", grid.width(), grid.height());
    let _ = writeln!(out, "directions {}", params.directions());
    let _ = writeln!(out, "radius {}", params.support().radius());
    let _ = writeln!(out, "gamma {:.16e}", params.gamma());
    let _ = writeln!(out, "depth {}", params.depth());
    let _ = writeln!(out, "variant {variant}");
    let _ = writeln!(out, "sharing {}", params.sharing().as_str());
    let _ = writeln!(out, "pooling {}", params.pooling().as_str());
    let _ = writeln!(out, "stacks {}", params.stacks().len());

    let layers = match params.sharing() {
        Sharing::Layerwise => params.depth(),
        Sharing::Stationary => 1,
    };
    for (k, stack) in params.stacks().iter().enumerate() {
        for t in 0..layers {
            let layer_tag = match params.sharing() {
                Sharing::Layerwise => t.to_string(),
                Sharing::Stationary => "shared".to_string(),
            };
            let class_tag = if params.is_classwise() {
                format!(" {k}")
            } else {
                String::new()
            };
            for (c, p) in stack.layer(t).iter().enumerate() {
                let dir = Direction::from_index(c).map(Direction::name).unwrap_or("?");
                for ((x, y), &w) in p.indexed_iter() {
                    if w.to_bits() != 0 {
                        let _ = writeln!(
                            out,
                            "ctx {variant} {layer_tag}{class_tag} {x} {y} {dir} {w:.16e}"
                        );
                    }
                }
            }
        }
    }
    out
}

pub fn import_context(text: &str) -> Result<ContextParams> {
    let bad = |line: usize, message: String| Error::Format {
        path: format!("<context line {line}>").into(),
        message,
    };
    let mut header = Header::default();
    let mut edges = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = content.split_whitespace().collect();
        let num = |i: usize| -> Result<usize> {
            tokens
                .get(i)
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| bad(line, format!("expected an integer in `{content}`")))
        };
        match tokens[0] {
            "grid" => header.grid = Some(GridSpec::new(num(1)?, num(2)?)?),
            "directions" => header.directions = Some(num(1)?),
            "radius" => header.radius = Some(num(1)?),
            "depth" => header.depth = Some(num(1)?),
            "stacks" => header.stacks = Some(num(1)?),
            "gamma" => {
                header.gamma = Some(
                    tokens
                        .get(1)
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| bad(line, "bad gamma".into()))?,
                )
            }
            "variant" => header.variant = Some(tokens.get(1).copied().unwrap_or("").parse()?),
            "sharing" => header.sharing = Some(tokens.get(1).copied().unwrap_or("").parse()?),
            "pooling" => header.pooling = Some(tokens.get(1).copied().unwrap_or("").parse()?),
            "ctx" => edges.push((line, tokens.iter().map(|t| t.to_string()).collect::<Vec<_>>())),
            other => return Err(bad(line, format!("unknown directive `{other}`"))),
        }
    }

    let missing = |what: &str| bad(0, format!("missing `{what}` header"));
    let grid = header.grid.ok_or_else(|| missing("grid"))?;
    let radius = header.radius.ok_or_else(|| missing("radius"))?;
    let depth = header.depth.ok_or_else(|| missing("depth"))?;
    let gamma = header.gamma.ok_or_else(|| missing("gamma"))?;
    let variant = header.variant.ok_or_else(|| missing("variant"))?;
    let sharing = header.sharing.ok_or_else(|| missing("sharing"))?;
    let stacks_count = header.stacks.ok_or_else(|| missing("stacks"))?;
    let support = NeighborhoodSystem::build(grid, radius)?;
    if header.directions.unwrap_or(4) != support.directions() {
        return Err(bad(0, "only 4 directions are supported".into()));
    }
    let classwise = variant == Variant::Classwise;
    let n = grid.cells();
    let mut stacks = vec![ContextStack::zeros(depth, support.directions(), n); stacks_count];

    for (line, tokens) in edges {
        let expected = if classwise { 8 } else { 7 };
        if tokens.len() != expected {
            return Err(bad(line, format!("edge line needs {expected} fields")));
        }
        if tokens[1] != variant.as_str() {
            return Err(bad(line, format!("edge variant `{}` differs from header", tokens[1])));
        }
        let layers: Vec<usize> = match (sharing, tokens[2].as_str()) {
            (Sharing::Stationary, "shared") => (0..depth).collect(),
            (Sharing::Layerwise, t) => match t.parse::<usize>() {
                Ok(t) if t < depth => vec![t],
                _ => return Err(bad(line, format!("bad layer `{t}`"))),
            },
            (_, t) => return Err(bad(line, format!("bad layer `{t}` for {} context", sharing.as_str()))),
        };
        let mut i = 3;
        let stack = if classwise {
            i += 1;
            tokens[3]
                .parse::<usize>()
                .ok()
                .filter(|&k| k < stacks_count)
                .ok_or_else(|| bad(line, format!("bad class `{}`", tokens[3])))?
        } else {
            0
        };
        let cell = |tok: &str| {
            tok.parse::<usize>()
                .ok()
                .filter(|&x| x < n)
                .ok_or_else(|| bad(line, format!("bad cell `{tok}`")))
        };
        let x = cell(&tokens[i])?;
        let y = cell(&tokens[i + 1])?;
        let dir: Direction = tokens[i + 2].parse()?;
        let weight: f64 = tokens[i + 3]
            .parse()
            .map_err(|_| bad(line, format!("bad weight `{}`", tokens[i + 3])))?;
        if !support.mask(dir.index())[[x, y]] {
            return Err(bad(line, format!("edge {x} -> {y} ({dir}) is off the neighborhood support")));
        }
        for t in layers {
            stacks[stack].layer_mut(t)[dir.index()][[x, y]] = weight;
        }
    }

    let params = ContextParams::from_stacks(support, sharing, classwise, gamma, stacks)?;
    Ok(params.with_pooling(header.pooling.unwrap_or_default()))
}

#[derive(Default)]
struct Header {
    grid: Option<GridSpec>,
    directions: Option<usize>,
    radius: Option<usize>,
    depth: Option<usize>,
    stacks: Option<usize>,
    gamma: Option<f64>,
    variant: Option<Variant>,
    sharing: Option<Sharing>,
    pooling: Option<Pooling>,
}

pub fn write_context(path: &Path, params: &ContextParams) -> Result<()> {
    fs::write(path, export_context(params))?;
    Ok(())
}

pub fn read_context(path: &Path) -> Result<ContextParams> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => e.into(),
    })?;
    import_context(&text).map_err(|e| match e {
        Error::Format { message, .. } => Error::Format {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}
