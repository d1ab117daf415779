//! Minimal SVG overlay writer: colored circle markers over the image frame.

/// One marker layer: a named group of equally colored circles.
pub struct MarkerLayer<'a> {
    pub id: &'a str,
    pub color: &'a str,
    pub radius: f64,
    pub points: Vec<[f64; 2]>,
}

/// Renders the image rectangle plus marker layers as a standalone SVG
/// document.
pub fn render(width: u32, height: u32, layers: &[MarkerLayer<'_>]) -> String {
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n",
        w = width,
        h = height
    ));
    out.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"white\" stroke=\"black\" stroke-width=\"2\"/>\n",
        w = width,
        h = height
    ));
    for layer in layers {
        out.push_str(&format!(
            "  <g id=\"{}\" fill=\"{}\">\n",
            layer.id, layer.color
        ));
        for p in &layer.points {
            out.push_str(&format!(
                "    <circle cx=\"{}\" cy=\"{}\" r=\"{}\"/>\n",
                p[0], p[1], layer.radius
            ));
        }
        out.push_str("  </g>\n");
    }
    out.push_str("</svg>\n");
    out
}
