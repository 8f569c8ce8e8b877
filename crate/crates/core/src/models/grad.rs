use super::FactorModel;

/// Dense gradient accumulator that tracks which rows were touched, so the
/// optimizer and the reset only visit those rows.
#[derive(Debug, Clone)]
pub struct Gradients {
    d: usize,
    user: Vec<f64>,
    item: Vec<f64>,
    bias: Vec<f64>,
    user_seen: Vec<bool>,
    item_seen: Vec<bool>,
    users: Vec<u32>,
    items: Vec<u32>,
}

impl Gradients {
    pub fn for_model(model: &FactorModel) -> Self {
        let (n, m, d) = (model.n(), model.m(), model.dim());
        Self {
            d,
            user: vec![0.0; n * d],
            item: vec![0.0; m * d],
            bias: vec![0.0; m],
            user_seen: vec![false; n],
            item_seen: vec![false; m],
            users: Vec::new(),
            items: Vec::new(),
        }
    }

    /// Accumulates `dz · ∂z_ui/∂θ` for the logit of `(u, i)`.
    #[inline]
    pub fn add_logit_grad(&mut self, model: &FactorModel, u: u32, i: u32, dz: f64) {
        let d = self.d;
        let (us, is) = (u as usize * d, i as usize * d);
        let p = model.user_row(u);
        let q = model.item_row(i);
        for k in 0..d {
            self.user[us + k] += dz * q[k];
            self.item[is + k] += dz * p[k];
        }
        self.bias[i as usize] += dz;
        if !self.user_seen[u as usize] {
            self.user_seen[u as usize] = true;
            self.users.push(u);
        }
        if !self.item_seen[i as usize] {
            self.item_seen[i as usize] = true;
            self.items.push(i);
        }
    }

    pub fn touched_users(&self) -> &[u32] {
        &self.users
    }

    pub fn touched_items(&self) -> &[u32] {
        &self.items
    }

    pub fn user_grad(&self, u: u32) -> &[f64] {
        &self.user[u as usize * self.d..(u as usize + 1) * self.d]
    }

    pub fn item_grad(&self, i: u32) -> &[f64] {
        &self.item[i as usize * self.d..(i as usize + 1) * self.d]
    }

    pub fn bias_grad(&self, i: u32) -> f64 {
        self.bias[i as usize]
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty() && self.items.is_empty()
    }

    /// Zeroes the touched rows.
    pub fn clear(&mut self) {
        let d = self.d;
        for &u in &self.users {
            self.user[u as usize * d..(u as usize + 1) * d].fill(0.0);
            self.user_seen[u as usize] = false;
        }
        for &i in &self.items {
            self.item[i as usize * d..(i as usize + 1) * d].fill(0.0);
            self.bias[i as usize] = 0.0;
            self.item_seen[i as usize] = false;
        }
        self.users.clear();
        self.items.clear();
    }

    /// Largest absolute accumulated entry.
    pub fn max_abs(&self) -> f64 {
        let rows = self.users.iter().flat_map(|&u| self.user_grad(u).iter());
        let cols = self
            .items
            .iter()
            .flat_map(|&i| self.item_grad(i).iter().chain(std::iter::once(&self.bias[i as usize])));
        rows.chain(cols).fold(0.0, |acc, x| acc.max(x.abs()))
    }
}
